#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "sslada/checkpoint.hpp"
#include "sslada/harness.hpp"

namespace sslada::harness {
namespace {

using nlohmann::json;

constexpr int kGridSchemaVersion = 1;

std::string mean_std(const std::vector<double>& values) {
  if (values.empty()) return "-";
  const auto agg = metrics::aggregate(values);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f±%.4f", agg.mean, agg.std);
  return buf;
}

/// Display width, counting each UTF-8 code point once.
std::size_t width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w > width(s) ? w - width(s) : 0, ' '); }

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw ArgumentError("failed writing " + path.string());
}

}  // namespace

std::string format_grid_table(const ExperimentReport& r) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"domain", "n_eval", "baseline"};
  header.insert(header.end(), r.methods.begin(), r.methods.end());
  rows.push_back(header);
  for (const auto& d : r.domains) {
    std::vector<std::string> row{d};
    auto n = r.eval_sizes.find(d);
    row.push_back(n == r.eval_sizes.end() ? "-" : std::to_string(n->second));
    auto b = r.baseline.find(d);
    row.push_back(b == r.baseline.end() ? "-" : mean_std(b->second));
    for (const auto& m : r.methods) {
      const auto dc = r.cells.find(d);
      const std::vector<double>* v = nullptr;
      if (dc != r.cells.end()) {
        auto mc = dc->second.find(m);
        if (mc != dc->second.end()) v = &mc->second;
      }
      row.push_back(v ? mean_std(*v) : "-");
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  }
  std::string out = "# AUPRC mean±std over " + std::to_string(r.seeds.size()) + " seed(s):";
  for (auto s : r.seeds) out += " " + std::to_string(s);
  out += "\n";
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += c + 1 == row.size() ? row[c] : pad(row[c], widths[c] + 2);
    }
    out += line + "\n";
  }
  return out;
}

std::string format_grid_json(const ExperimentReport& r) {
  json curves = json::array();
  for (const auto& c : r.curves) {
    curves.push_back({{"seed", c.seed}, {"domain", c.domain}, {"method", c.method},
                      {"round", c.round}, {"labeled", c.labeled}, {"auprc", c.auprc}});
  }
  json j = {{"schema_version", kGridSchemaVersion},
            {"seeds", r.seeds},
            {"domains", r.domains},
            {"methods", r.methods},
            {"eval_sizes", r.eval_sizes},
            {"baseline", r.baseline},
            {"cells", r.cells},
            {"curves", curves}};
  return j.dump(2) + "\n";
}

ExperimentReport parse_grid_json(const std::string& text) {
  ExperimentReport r;
  try {
    const json j = json::parse(text);
    if (j.at("schema_version").get<int>() > kGridSchemaVersion) {
      throw ArgumentError("grid file has a newer schema version");
    }
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.domains = j.at("domains").get<std::vector<std::string>>();
    r.methods = j.at("methods").get<std::vector<std::string>>();
    r.eval_sizes = j.at("eval_sizes").get<std::map<std::string, std::size_t>>();
    r.baseline = j.at("baseline").get<std::map<std::string, std::vector<double>>>();
    r.cells = j.at("cells").get<metrics::ResultGrid>();
    for (const json& c : j.at("curves")) {
      r.curves.push_back({c.at("seed").get<std::uint64_t>(), c.at("domain").get<std::string>(),
                          c.at("method").get<std::string>(), c.at("round").get<std::size_t>(),
                          c.at("labeled").get<std::size_t>(), c.at("auprc").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("malformed grid file: ") + e.what());
  }
  return r;
}

std::string format_deltas(const ExperimentReport& r) {
  std::string out = "domain\tmethod\tmethod_mean\tbaseline_mean\tdelta\n";
  auto rows = metrics::delta_table(r.cells, r.baseline);
  auto rank = [](const std::vector<std::string>& order, const std::string& key) {
    return std::find(order.begin(), order.end(), key) - order.begin();
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const metrics::DeltaRow& a, const metrics::DeltaRow& b) {
    const auto da = rank(r.domains, a.domain), db = rank(r.domains, b.domain);
    if (da != db) return da < db;
    return rank(r.methods, a.method) < rank(r.methods, b.method);
  });
  for (const auto& row : rows) {
    out += row.domain + "\t" + row.method + "\t" + format_double(row.method_mean) + "\t" +
           format_double(row.baseline_mean) + "\t" + format_double(row.delta) + "\n";
  }
  return out;
}

std::string format_curves(const ExperimentReport& r) {
  std::string out = "seed\tdomain\tmethod\tround\tlabeled\tauprc\n";
  for (const auto& c : r.curves) {
    out += std::to_string(c.seed) + "\t" + c.domain + "\t" + c.method + "\t" + std::to_string(c.round) + "\t" +
           std::to_string(c.labeled) + "\t" + format_double(c.auprc) + "\n";
  }
  return out;
}

void emit_results(const ExperimentReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ArgumentError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_file(out_dir / "grid.txt", format_grid_table(report));
  write_file(out_dir / "grid.json", format_grid_json(report));
  write_file(out_dir / "deltas.tsv", format_deltas(report));
  write_file(out_dir / "curves.tsv", format_curves(report));
}

}  // namespace sslada::harness
