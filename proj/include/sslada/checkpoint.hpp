#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "sslada/network.hpp"
#include "sslada/tensor.hpp"

namespace sslada {

/// Named networks, tensors and string metadata shared between workflow steps.
///
/// On-disk format (UTF-8 text, one record per line, numbers in shortest
/// round-trip decimal form so reloading is bit-exact):
///
///     sslada-checkpoint 1
///     meta <key> <value up to end of line>
///     network <name> <layer count>
///     layer <in> <out> <activation>
///     <in*out weights, row-major, space separated>
///     <out biases>
///     tensor <name> <rank> <dim>...
///     <values>
///     end
///
/// Names and meta keys must not contain whitespace. Records may appear in any
/// order; readers reject unknown record kinds and newer format versions.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::map<std::string, Network> networks;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;

  const Network& network(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace sslada
