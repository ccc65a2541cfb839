#include "sslada/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sslada/checkpoint.hpp"
#include "sslada/error.hpp"
#include "sslada/rng.hpp"

namespace sslada::data {

// ---------------------------------------------------------------- Pool

Pool Pool::empty(std::size_t dim) {
  Pool p;
  p.features = Tensor::matrix(0, dim);
  return p;
}

std::size_t Pool::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != kUnlabeled; }));
}

std::size_t Pool::positive_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t Pool::index_of(std::int64_t id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw ArgumentError("unknown sample id " + std::to_string(id));
  return static_cast<std::size_t>(it - ids.begin());
}

Pool Pool::subset(std::span<const std::size_t> indices) const {
  Pool out;
  out.features = gather_rows(features, indices);
  for (std::size_t i : indices) {
    out.ids.push_back(ids[i]);
    out.labels.push_back(labels[i]);
    out.domains.push_back(domains[i]);
  }
  return out;
}

Pool Pool::subset_ids(std::span<const std::int64_t> wanted) const {
  std::unordered_map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(wanted.size());
  for (std::int64_t id : wanted) {
    auto it = index.find(id);
    if (it == index.end()) throw ArgumentError("unknown sample id " + std::to_string(id));
    rows.push_back(it->second);
  }
  return subset(rows);
}

Pool Pool::unlabeled_copy() const {
  Pool out = *this;
  std::fill(out.labels.begin(), out.labels.end(), kUnlabeled);
  return out;
}

void Pool::append(const Pool& other) {
  if (size() == 0 && features.cols() != other.features.cols()) {
    features = Tensor::matrix(0, other.dim());
  }
  if (other.size() == 0) return;
  if (other.dim() != dim()) throw DimensionError("append: feature dims differ");
  const std::unordered_set<std::int64_t> existing(ids.begin(), ids.end());
  for (std::int64_t id : other.ids) {
    if (existing.contains(id)) throw DataError("append: duplicate sample id " + std::to_string(id));
  }
  const Tensor parts[2] = {features, other.features};
  features = concat_rows(parts);
  ids.insert(ids.end(), other.ids.begin(), other.ids.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  domains.insert(domains.end(), other.domains.begin(), other.domains.end());
}

void Pool::validate() const {
  if (features.rank() != 2 || features.rows() != ids.size() || labels.size() != ids.size() ||
      domains.size() != ids.size()) {
    throw DimensionError("pool columns have inconsistent lengths");
  }
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t id : ids) {
    if (!seen.insert(id).second) throw DataError("duplicate sample id " + std::to_string(id));
  }
  for (int l : labels) {
    if (l != kUnlabeled && l != 0 && l != 1) throw DataError("label must be 0, 1 or unlabeled");
  }
}

bool Pool::operator==(const Pool& other) const {
  return ids == other.ids && labels == other.labels && domains == other.domains &&
         features.bit_equal(other.features);
}

// ---------------------------------------------------------------- specs

bool Shift::is_identity() const {
  return rotation == 0.0 && noise_scale == 1.0 &&
         std::all_of(translation.begin(), translation.end(), [](double t) { return t == 0.0; });
}

std::size_t DomainSpec::positive_count() const {
  if (n_positive) return *n_positive;
  return static_cast<std::size_t>(std::lround(static_cast<double>(n_samples) * positive_ratio));
}

void DomainFamily::validate() const {
  if (domains.empty()) throw ArgumentError("domain family is empty");
  std::size_t sources = 0;
  std::set<std::string> names;
  for (const DomainSpec& d : domains) {
    if (d.role == DomainRole::source) ++sources;
    if (!names.insert(d.name).second) throw ArgumentError("duplicate domain name " + d.name);
    if (!d.n_positive && !(d.positive_ratio > 0.0 && d.positive_ratio < 1.0)) {
      throw ArgumentError("domain " + d.name + ": positive_ratio must lie in (0, 1)");
    }
    const std::size_t pos = d.positive_count();
    if (pos == 0) throw ArgumentError("domain " + d.name + ": configuration yields zero positives");
    if (pos > d.n_samples) throw ArgumentError("domain " + d.name + ": more positives than samples");
    if (!d.shift.translation.empty() && d.shift.translation.size() != base.dim) {
      throw DimensionError("domain " + d.name + ": translation length differs from feature dim");
    }
    if (!(d.shift.noise_scale >= 0.0)) throw ArgumentError("domain " + d.name + ": bad noise_scale");
  }
  if (sources != 1) throw ArgumentError("domain family needs exactly one source domain");
  if (base.dim == 0 || base.latent_dim < 2 || base.latent_dim > base.dim) {
    throw ArgumentError("base distribution needs 2 <= latent_dim <= dim");
  }
  if (base.kind == BaseKind::blobs && (base.negative_clusters == 0 || base.positive_clusters == 0)) {
    throw ArgumentError("blob base distribution needs at least one cluster per class");
  }
}

const DomainSpec& DomainFamily::source() const {
  for (const DomainSpec& d : domains) {
    if (d.role == DomainRole::source) return d;
  }
  throw ArgumentError("domain family has no source domain");
}

std::size_t DomainFamily::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i].name == name) return i;
  }
  throw ArgumentError("unknown domain " + name);
}

// ---------------------------------------------------------------- generation

FamilyGeometry family_geometry(const DomainFamily& family) {
  const BaseDistribution& b = family.base;
  Rng rng(derive_seed(family.seed, {100}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t latent = b.kind == BaseKind::moons ? 2 : b.latent_dim;

  FamilyGeometry g;
  g.embedding = Tensor::matrix(latent, b.dim);
  for (std::size_t r = 0; r < latent; ++r) {
    auto row = g.embedding.row(r);
    for (double& v : row) v = normal(rng);
    for (std::size_t q = 0; q < r; ++q) {
      auto prev = g.embedding.row(q);
      double dot = 0.0;
      for (std::size_t j = 0; j < b.dim; ++j) dot += row[j] * prev[j];
      for (std::size_t j = 0; j < b.dim; ++j) row[j] -= dot * prev[j];
    }
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }
  auto centers = [&](std::size_t k) {
    Tensor c = Tensor::matrix(k, latent);
    for (double& v : c.values()) v = normal(rng) * b.cluster_separation;
    return c;
  };
  if (b.kind == BaseKind::blobs) {
    g.negative_centers = centers(b.negative_clusters);
    g.positive_centers = centers(b.positive_clusters);
  }
  return g;
}

namespace {

void rotate_rows(Tensor& features, double angle, const FamilyGeometry& g) {
  if (angle == 0.0) return;
  auto e0 = g.embedding.row(0);
  auto e1 = g.embedding.row(1);
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto x = features.row(i);
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      a += x[j] * e0[j];
      b += x[j] * e1[j];
    }
    const double da = (a * c - b * s) - a;
    const double db = (a * s + b * c) - b;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += da * e0[j] + db * e1[j];
  }
}

void translate_rows(Tensor& features, std::span<const double> t, double sign) {
  if (t.empty()) return;
  if (t.size() != features.cols()) throw DimensionError("translation length differs from feature dim");
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto x = features.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += sign * t[j];
  }
}

std::vector<double> latent_sample(const BaseDistribution& b, const FamilyGeometry& g, int label,
                                  Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  if (b.kind == BaseKind::moons) {
    const double t = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
    const double r = b.cluster_separation / 2.0;
    std::vector<double> z = label == 0
                                ? std::vector<double>{r * std::cos(t), r * std::sin(t)}
                                : std::vector<double>{r * (1.0 - std::cos(t)), r * (0.5 - std::sin(t))};
    for (double& v : z) v += b.cluster_spread * normal(rng);
    return z;
  }
  const Tensor& centers = label == 1 ? g.positive_centers : g.negative_centers;
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, centers.rows() - 1)(rng);
  std::vector<double> z(centers.cols());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = centers.at(k, j) + b.cluster_spread * normal(rng);
  return z;
}

}  // namespace

void apply_shift(Tensor& features, const Shift& shift, const FamilyGeometry& geometry) {
  rotate_rows(features, shift.rotation, geometry);
  translate_rows(features, shift.translation, 1.0);
}

void invert_shift(Tensor& features, const Shift& shift, const FamilyGeometry& geometry) {
  translate_rows(features, shift.translation, -1.0);
  rotate_rows(features, -shift.rotation, geometry);
}

std::vector<GeneratedDomain> gen_family(const DomainFamily& family) {
  family.validate();
  const FamilyGeometry geometry = family_geometry(family);
  const BaseDistribution& b = family.base;
  std::vector<GeneratedDomain> out;
  for (std::size_t d = 0; d < family.domains.size(); ++d) {
    const DomainSpec& spec = family.domains[d];
    Rng rng(derive_seed(family.seed, {200, d}));
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t n = spec.n_samples;
    const std::size_t n_pos = spec.positive_count();
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<long>(n_pos), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    Pool pool;
    pool.features = Tensor::matrix(n, b.dim);
    const double noise = b.noise * spec.shift.noise_scale;
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> z = latent_sample(b, geometry, labels[i], rng);
      auto x = pool.features.row(i);
      for (std::size_t l = 0; l < z.size(); ++l) {
        auto e = geometry.embedding.row(l);
        for (std::size_t j = 0; j < b.dim; ++j) x[j] += z[l] * e[j];
      }
      for (double& v : x) v += noise * normal(rng);
      pool.ids.push_back(static_cast<std::int64_t>(d) * 1'000'000 + static_cast<std::int64_t>(i));
      pool.domains.push_back(spec.name);
    }
    pool.labels = std::move(labels);
    apply_shift(pool.features, spec.shift, geometry);
    out.push_back({spec, std::move(pool)});
  }
  return out;
}

DomainFamily default_family(std::size_t dim, std::uint64_t seed) {
  struct Row {
    const char* name;
    std::size_t total;
    std::size_t positives;
    double ratio;
    int origin;  // 0 = H, 1 = B, 2 = M
    int trait;   // 0 = default, 1 = age, 2 = head/neck, 3 = palms/soles
  };
  // Sizes and melanoma counts per domain of the dermoscopy benchmark.
  static constexpr Row rows[] = {
      {"H", 4699, 465, 0.10, 0, 0},  {"HA", 557, 25, 0.04, 0, 1},  {"HLH", 220, 90, 0.45, 0, 2},
      {"HLP", 218, 15, 0.07, 0, 3},  {"B", 4639, 1918, 0.41, 1, 0}, {"BA", 879, 71, 0.08, 1, 1},
      {"BLH", 932, 612, 0.66, 1, 2}, {"BLP", 297, 192, 0.65, 1, 3}, {"M", 1847, 565, 0.31, 2, 0},
      {"MA", 464, 37, 0.08, 2, 1},   {"MLH", 292, 175, 0.60, 2, 2},
  };
  // Origin shifts translate along a fixed direction per origin; traits add
  // a rotation of the class plane and a noise change.
  static constexpr double origin_magnitude[] = {0.0, 1.6, 1.0};
  static constexpr double trait_rotation[] = {0.0, 0.15, -0.3, 0.45};
  static constexpr double trait_noise[] = {1.0, 1.1, 1.3, 1.6};
  static constexpr double trait_magnitude[] = {0.0, 0.4, 0.6, 0.8};

  DomainFamily family;
  family.seed = seed;
  family.base.dim = dim;
  family.base.latent_dim = std::min<std::size_t>(4, dim);

  Rng rng(derive_seed(seed, {300}));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unit = [&] {
    std::vector<double> v(dim);
    double n = 0.0;
    for (double& x : v) {
      x = normal(rng);
      n += x * x;
    }
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };
  std::vector<std::vector<double>> origin_dir = {unit(), unit(), unit()};
  std::vector<std::vector<double>> trait_dir = {unit(), unit(), unit(), unit()};

  for (const Row& r : rows) {
    DomainSpec spec;
    spec.name = r.name;
    spec.n_samples = r.total;
    spec.positive_ratio = r.ratio;
    spec.n_positive = r.positives;
    spec.role = r.origin == 0 && r.trait == 0 ? DomainRole::source : DomainRole::target;
    spec.shift.rotation = trait_rotation[r.trait];
    spec.shift.noise_scale = trait_noise[r.trait];
    if (r.origin != 0 || r.trait != 0) {
      spec.shift.translation.assign(dim, 0.0);
      for (std::size_t j = 0; j < dim; ++j) {
        spec.shift.translation[j] = origin_magnitude[r.origin] * origin_dir[r.origin][j] +
                                    trait_magnitude[r.trait] * trait_dir[r.trait][j];
      }
    }
    family.domains.push_back(std::move(spec));
  }
  return family;
}

Tensor generic_corpus(std::size_t n, std::size_t dim, std::size_t clusters, std::uint64_t seed) {
  if (clusters == 0) throw ArgumentError("generic corpus needs at least one cluster");
  Rng rng(derive_seed(seed, {400}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor centers = Tensor::matrix(clusters, dim);
  for (double& v : centers.values()) v = 2.0 * normal(rng);
  Tensor out = Tensor::matrix(n, dim);
  std::uniform_int_distribution<std::size_t> pick(0, clusters - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = pick(rng);
    auto row = out.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = centers.at(c, j) + normal(rng);
  }
  return out;
}

// ---------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  for (std::string& c : cells) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? "" : c.substr(b, e - b + 1);
  }
  return cells;
}

}  // namespace

Pool parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset has no header row");
  const std::vector<std::string> header = split_csv_line(line);
  int id_col = -1, label_col = -1, domain_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "id") {
      id_col = static_cast<int>(c);
    } else if (header[c] == "label") {
      label_col = static_cast<int>(c);
    } else if (header[c] == "domain") {
      domain_col = static_cast<int>(c);
    } else {
      feature_cols.push_back(c);
    }
  }
  if (id_col < 0) throw DataError("dataset header lacks an 'id' column");

  Pool pool;
  std::vector<double> values;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv_line(line);
    const std::string where = "row " + std::to_string(row_no);
    if (cells.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    try {
      std::size_t used = 0;
      const long long id = std::stoll(cells[static_cast<std::size_t>(id_col)], &used);
      if (used != cells[static_cast<std::size_t>(id_col)].size()) throw std::invalid_argument("id");
      pool.ids.push_back(id);
    } catch (const std::exception&) {
      throw DataError(where + ": id is not an integer");
    }
    int label = kUnlabeled;
    if (label_col >= 0) {
      const std::string& cell = cells[static_cast<std::size_t>(label_col)];
      if (cell == "0") {
        label = 0;
      } else if (cell == "1") {
        label = 1;
      } else if (!cell.empty()) {
        throw DataError(where + ": label must be 0, 1 or empty");
      }
    }
    pool.labels.push_back(label);
    pool.domains.push_back(domain_col >= 0 ? cells[static_cast<std::size_t>(domain_col)] : "");
    for (std::size_t c : feature_cols) {
      try {
        values.push_back(parse_double(cells[c]));
      } catch (const DataError&) {
        throw DataError(where + ": non-numeric feature '" + cells[c] + "' in column " + header[c]);
      }
    }
  }
  const std::size_t n = pool.ids.size();
  pool.features = Tensor({n, feature_cols.size()}, std::move(values));
  pool.validate();
  return pool;
}

Pool load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string format_csv(const Pool& pool) {
  pool.validate();
  std::string out = "id,label,domain";
  for (std::size_t j = 0; j < pool.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.domains[i].find(',') != std::string::npos) {
      throw DataError("domain name contains a comma: " + pool.domains[i]);
    }
    out += std::to_string(pool.ids[i]);
    out += ',';
    if (pool.labels[i] != kUnlabeled) out += std::to_string(pool.labels[i]);
    out += ',' + pool.domains[i];
    for (double v : pool.features.row(i)) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

void write_csv(const Pool& pool, const std::filesystem::path& path) {
  const std::string text = format_csv(pool);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path.string());
  out << text;
  if (!out) throw DataError("failed writing dataset " + path.string());
}

// ---------------------------------------------------------------- split

std::pair<Pool, Pool> split(const Pool& pool, double train_fraction, double eval_fraction,
                            std::uint64_t seed) {
  if (train_fraction < 0.0 || eval_fraction < 0.0 ||
      std::abs(train_fraction + eval_fraction - 1.0) > 1e-9) {
    throw ArgumentError("split fractions must be non-negative and sum to 1");
  }
  const std::size_t parts = (train_fraction > 0.0 ? 1 : 0) + (eval_fraction > 0.0 ? 1 : 0);
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < pool.size(); ++i) strata[pool.labels[i]].push_back(i);

  std::vector<std::size_t> train_idx, eval_idx;
  for (auto& [label, idx] : strata) {
    if (idx.size() < parts) {
      throw ArgumentError("split: stratum " + std::to_string(label) + " has " +
                          std::to_string(idx.size()) + " samples for " + std::to_string(parts) +
                          " parts");
    }
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(label + 1)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(idx.size())));
    if (parts == 2) n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    eval_idx.insert(eval_idx.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  Pool train = pool.subset(train_idx);
  Pool eval = pool.subset(eval_idx);
  if (train.size() == 0) train.features = Tensor::matrix(0, pool.dim());
  if (eval.size() == 0) eval.features = Tensor::matrix(0, pool.dim());
  return {std::move(train), std::move(eval)};
}

}  // namespace sslada::data
