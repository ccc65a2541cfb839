#include "sslada/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "sslada/error.hpp"

namespace sslada {
namespace {

constexpr std::string_view kMagic = "sslada-checkpoint";

void append_values(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += format_double(values[i]);
  }
  out += '\n';
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      const std::size_t end = text_.find('\n', pos_);
      const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
      line = text_.substr(pos_, stop - pos_);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      pos_ = stop + 1;
      ++line_no_;
      if (!line.empty()) return true;
    }
    return false;
  }

  std::string_view require(const char* what) {
    std::string_view line;
    if (!next(line)) fail(std::string("unexpected end of file, expected ") + what);
    return line;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError("checkpoint line " + std::to_string(line_no_) + ": " + msg);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::size_t parse_size(std::string_view s, const LineReader& r) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) r.fail("bad integer '" + std::string(s) + "'");
  return v;
}

std::vector<double> parse_values(std::string_view line, std::size_t expected, const LineReader& r) {
  auto tokens = split_ws(line);
  if (tokens.size() != expected) {
    r.fail("expected " + std::to_string(expected) + " values, got " + std::to_string(tokens.size()));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (auto t : tokens) {
    try {
      out.push_back(parse_double(t));
    } catch (const DataError& e) {
      r.fail(e.what());
    }
  }
  return out;
}

}  // namespace

const Network& Checkpoint::network(const std::string& name) const {
  auto it = networks.find(name);
  if (it == networks.end()) throw DataError("checkpoint has no network '" + name + "'");
  return it->second;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw DataError("cannot format double");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("not a number: '" + std::string(text) + "'");
  }
  return v;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += std::string(kMagic) + ' ' + std::to_string(Checkpoint::kFormatVersion) + '\n';
  for (const auto& [key, value] : ckpt.meta) {
    if (value.find('\n') != std::string::npos) throw DataError("meta value contains newline");
    out += "meta " + key + ' ' + value + '\n';
  }
  for (const auto& [name, net] : ckpt.networks) {
    out += "network " + name + ' ' + std::to_string(net.depth()) + '\n';
    for (const DenseLayer& l : net.layers()) {
      out += "layer " + std::to_string(l.input_dim()) + ' ' + std::to_string(l.output_dim()) +
             ' ' + activation_name(l.activation) + '\n';
      append_values(out, l.weight.values());
      append_values(out, l.bias.values());
    }
  }
  for (const auto& [name, t] : ckpt.tensors) {
    out += "tensor " + name + ' ' + std::to_string(t.rank());
    for (std::size_t d : t.shape()) out += ' ' + std::to_string(d);
    out += '\n';
    if (!t.empty()) append_values(out, t.values());
  }
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  LineReader reader(text);
  auto header = split_ws(reader.require("header"));
  if (header.size() != 2 || header[0] != kMagic) reader.fail("not an sslada checkpoint");
  const std::size_t version = parse_size(header[1], reader);
  if (version == 0 || version > static_cast<std::size_t>(Checkpoint::kFormatVersion)) {
    reader.fail("unsupported checkpoint version " + std::string(header[1]));
  }

  Checkpoint ckpt;
  bool ended = false;
  std::string_view line;
  while (!ended && reader.next(line)) {
    auto tok = split_ws(line);
    if (tok[0] == "end") {
      ended = true;
    } else if (tok[0] == "meta") {
      if (tok.size() < 2) reader.fail("meta record needs a key");
      const std::size_t value_pos =
          static_cast<std::size_t>(tok[1].data() - line.data()) + tok[1].size();
      std::string value = value_pos < line.size() ? std::string(line.substr(value_pos + 1)) : "";
      ckpt.meta[std::string(tok[1])] = std::move(value);
    } else if (tok[0] == "network") {
      if (tok.size() != 3) reader.fail("network record needs name and layer count");
      const std::size_t n_layers = parse_size(tok[2], reader);
      std::vector<DenseLayer> layers;
      for (std::size_t i = 0; i < n_layers; ++i) {
        auto lt = split_ws(reader.require("layer record"));
        if (lt.size() != 4 || lt[0] != "layer") reader.fail("expected layer record");
        const std::size_t in = parse_size(lt[1], reader);
        const std::size_t out = parse_size(lt[2], reader);
        DenseLayer layer;
        try {
          layer.activation = parse_activation(std::string(lt[3]));
        } catch (const ArgumentError& e) {
          reader.fail(e.what());
        }
        layer.weight = Tensor({in, out}, parse_values(reader.require("weights"), in * out, reader));
        layer.bias = Tensor({out}, parse_values(reader.require("biases"), out, reader));
        layers.push_back(std::move(layer));
      }
      try {
        ckpt.networks.insert_or_assign(std::string(tok[1]), Network(std::move(layers)));
      } catch (const DimensionError& e) {
        reader.fail(e.what());
      }
    } else if (tok[0] == "tensor") {
      if (tok.size() < 3) reader.fail("tensor record needs name and rank");
      const std::size_t rank = parse_size(tok[2], reader);
      if (tok.size() != 3 + rank) reader.fail("tensor record rank/dims mismatch");
      std::vector<std::size_t> shape;
      std::size_t count = 1;
      for (std::size_t i = 0; i < rank; ++i) {
        shape.push_back(parse_size(tok[3 + i], reader));
        count *= shape.back();
      }
      std::vector<double> values;
      if (count > 0) values = parse_values(reader.require("values"), count, reader);
      ckpt.tensors.insert_or_assign(std::string(tok[1]), Tensor(shape, std::move(values)));
    } else {
      reader.fail("unknown record '" + std::string(tok[0]) + "'");
    }
  }
  if (!ended) reader.fail("missing end record");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string text = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace sslada
