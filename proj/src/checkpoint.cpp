#include "dunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "dunet/io.hpp"

namespace dunet {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'N', 'E', 'T', 'C', 'K', 'P'};

template <typename T>
void put(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint is truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

std::string get_text(const std::string& in, std::size_t& pos) {
  const auto n = get<std::uint32_t>(in, pos);
  if (pos + n > in.size()) throw IoError("checkpoint is truncated");
  std::string s = in.substr(pos, n);
  pos += n;
  return s;
}

void put_text(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

std::string stat_name(const Network& net, int op, const char* what) {
  const auto& g = net.graph();
  return "bn:" + g.values[g.ops[op].output].name + "." + what;
}

}  // namespace

std::string encode_checkpoint(const ExperimentConfig& config, const Network& net) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put_text(out, format_config(config));
  const auto stats = net.running_stats();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.params().size() + 2 * stats.size()));
  auto array = [&](const std::string& name, std::span<const double> v) {
    put_text(out, name);
    put<std::uint64_t>(out, v.size());
    for (double d : v) put<double>(out, d);
  };
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    array(net.graph().params[i].name, net.params()[i].values());
  }
  for (const auto& [op, mv] : stats) {
    array(stat_name(net, op, "running_mean"), mv.first.values());
    array(stat_name(net, op, "running_var"), mv.second.values());
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError("not a checkpoint file");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config = parse_config(get_text(bytes, pos));
  const auto count = get<std::uint32_t>(bytes, pos);
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name = get_text(bytes, pos);
    const auto n = get<std::uint64_t>(bytes, pos);
    if (n > (bytes.size() - pos) / 8) throw IoError("checkpoint is truncated");
    std::vector<double> v(n);
    for (auto& d : v) d = get<double>(bytes, pos);
    c.arrays.emplace_back(std::move(name), std::move(v));
  }
  if (pos != bytes.size()) throw IoError("trailing bytes after checkpoint arrays");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                     const Network& net) {
  write_atomic(path, encode_checkpoint(config, net));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void restore(Network& net, const Checkpoint& ckpt) {
  std::map<std::string, const std::vector<double>*> by_name;
  for (const auto& [name, v] : ckpt.arrays) by_name[name] = &v;
  auto fetch = [&](const std::string& name, std::size_t n) -> const std::vector<double>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint lacks array '" + name + "'");
    if (it->second->size() != n) throw IoError("checkpoint array '" + name + "' has wrong size");
    return *it->second;
  };
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    auto& p = net.params()[i];
    p.storage() = fetch(net.graph().params[i].name, p.size());
  }
  for (const auto& [op, mv] : net.running_stats()) {
    const auto& m = fetch(stat_name(net, op, "running_mean"), mv.first.size());
    const auto& v = fetch(stat_name(net, op, "running_var"), mv.second.size());
    net.set_running_stats(op, Tensor(mv.first.shape(), m), Tensor(mv.second.shape(), v));
  }
}

}  // namespace dunet
