#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eatformer/model.hpp"

namespace eatformer {

// ---- variant config text format ------------------------------------------------
//
// One `key = value` pair per line; lists are comma separated and the
// per-stage dilation lists are joined with '|'. Mirrors VariantSpec.

inline std::string format_variant_config(const VariantSpec& s) {
  std::ostringstream os;
  auto join = [](const auto& seq) {
    std::string r;
    for (const auto& v : seq) r += (r.empty() ? "" : ",") + std::to_string(v);
    return r;
  };
  os << "name = " << s.name << "\n";
  os << "depths = " << join(s.depths) << "\n";
  os << "dims = " << join(s.dims) << "\n";
  os << "head_dim = " << s.head_dim << "\n";
  os << "window = " << s.window << "\n";
  os << "kernel = " << s.kernel << "\n";
  os << "dilations = ";
  for (int i = 0; i < 4; ++i) os << (i ? " | " : "") << join(s.dilations[i]);
  os << "\n";
  os << "gli_stages = " << join(s.gli_stages) << "\n";
  os << "msra_stages = " << join(s.msra_stages) << "\n";
  os << "split_ratio = " << s.split_ratio << "\n";
  os << "ffn_ratio = " << s.ffn_ratio << "\n";
  os << "num_classes = " << s.num_classes << "\n";
  os << "norm = " << to_string(s.norm) << "\n";
  os << "ffn_act = " << to_string(s.ffn_act) << "\n";
  os << "md_msa = " << (s.md_msa ? "true" : "false") << "\n";
  os << "use_trh = " << (s.use_trh ? "true" : "false") << "\n";
  os << "trh_layers = " << s.trh_layers << "\n";
  os << "trh_tasks = " << s.trh_tasks << "\n";
  return os.str();
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

inline std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& part : split(s, ','))
    if (!part.empty()) out.push_back(std::stoll(part));
  return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail("config value for '" + key + "' must be true/false, got '" + s + "'");
}

}  // namespace detail

inline VariantSpec parse_variant_config(const std::string& text) {
  VariantSpec s;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    detail::check(eq != std::string::npos, "config line missing '=': " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "name") {
      s.name = value;
    } else if (key == "depths") {
      auto v = detail::parse_int_list(value);
      detail::check(v.size() == 4, "depths needs 4 entries");
      for (int i = 0; i < 4; ++i) s.depths[i] = static_cast<int>(v[i]);
    } else if (key == "dims") {
      auto v = detail::parse_int_list(value);
      detail::check(v.size() == 4, "dims needs 4 entries");
      for (int i = 0; i < 4; ++i) s.dims[i] = v[i];
    } else if (key == "head_dim") {
      s.head_dim = std::stoll(value);
    } else if (key == "window") {
      s.window = std::stoll(value);
    } else if (key == "kernel") {
      s.kernel = std::stoll(value);
    } else if (key == "dilations") {
      auto groups = detail::split(value, '|');
      detail::check(groups.size() == 4, "dilations needs 4 '|'-separated stage lists");
      for (int i = 0; i < 4; ++i) {
        s.dilations[i].clear();
        for (auto d : detail::parse_int_list(groups[i]))
          s.dilations[i].push_back(static_cast<int>(d));
      }
    } else if (key == "gli_stages") {
      s.gli_stages.clear();
      for (auto v : detail::parse_int_list(value)) s.gli_stages.insert(static_cast<int>(v));
    } else if (key == "msra_stages") {
      s.msra_stages.clear();
      for (auto v : detail::parse_int_list(value)) s.msra_stages.insert(static_cast<int>(v));
    } else if (key == "split_ratio") {
      s.split_ratio = std::stod(value);
    } else if (key == "ffn_ratio") {
      s.ffn_ratio = std::stoll(value);
    } else if (key == "num_classes") {
      s.num_classes = std::stoll(value);
    } else if (key == "norm") {
      detail::check(value == "batchnorm" || value == "layernorm",
                    "norm must be batchnorm or layernorm, got '" + value + "'");
      s.norm = value == "batchnorm" ? NormKind::batchnorm : NormKind::layernorm;
    } else if (key == "ffn_act") {
      detail::check(value == "gelu" || value == "relu",
                    "ffn_act must be gelu or relu, got '" + value + "'");
      s.ffn_act = value == "gelu" ? Activation::gelu : Activation::relu;
    } else if (key == "md_msa") {
      s.md_msa = detail::parse_bool(value, key);
    } else if (key == "use_trh") {
      s.use_trh = detail::parse_bool(value, key);
    } else if (key == "trh_layers") {
      s.trh_layers = std::stoi(value);
    } else if (key == "trh_tasks") {
      s.trh_tasks = std::stoi(value);
    } else {
      detail::fail("unknown config key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

// ---- checkpoint container --------------------------------------------------------
//
// Layout (little endian):
//   magic "EATF" | u32 version | u32 record count | records...
// record:
//   u32 name length | name bytes | u8 dtype (0 = f64, 1 = raw bytes)
//   | u32 rank | i64 extents[rank] | payload

namespace detail {

constexpr char kCheckpointMagic[4] = {'E', 'A', 'T', 'F'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path) {
  namespace fs = std::filesystem;
  const ParamList params = model.params();
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    detail::check(os.good(), "cannot open '" + tmp.string() + "' for writing");
    os.write(detail::kCheckpointMagic, 4);
    detail::write_pod(os, detail::kCheckpointVersion);
    const std::string config = format_variant_config(model.spec);
    detail::write_pod(os, static_cast<std::uint32_t>(params.size() + 1));
    // config record
    const std::string cname = "__config__";
    detail::write_pod(os, static_cast<std::uint32_t>(cname.size()));
    os.write(cname.data(), static_cast<std::streamsize>(cname.size()));
    detail::write_pod(os, static_cast<std::uint8_t>(1));
    detail::write_pod(os, static_cast<std::uint32_t>(1));
    detail::write_pod(os, static_cast<std::int64_t>(config.size()));
    os.write(config.data(), static_cast<std::streamsize>(config.size()));
    for (const auto& p : params) {
      detail::write_pod(os, static_cast<std::uint32_t>(p.name.size()));
      os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      detail::write_pod(os, static_cast<std::uint8_t>(0));
      detail::write_pod(os, static_cast<std::uint32_t>(p.tensor.rank()));
      for (auto e : p.tensor.shape()) detail::write_pod(os, e);
      os.write(reinterpret_cast<const char*>(p.tensor.data()),
               static_cast<std::streamsize>(p.tensor.numel() * sizeof(double)));
    }
    detail::check(os.good(), "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw detail::CheckpointError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw detail::CheckpointError("bad checkpoint magic in '" + path + "'");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != detail::kCheckpointVersion)
    throw detail::CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(is, "record count");

  auto read_name = [&](std::uint32_t len) {
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw detail::CheckpointError("checkpoint truncated while reading a record name");
    return name;
  };

  // first record must be the config
  const auto nlen = detail::read_pod<std::uint32_t>(is, "record name length");
  const std::string cname = read_name(nlen);
  if (cname != "__config__")
    throw detail::CheckpointError("checkpoint missing leading __config__ record");
  const auto cdtype = detail::read_pod<std::uint8_t>(is, "config dtype");
  const auto crank = detail::read_pod<std::uint32_t>(is, "config rank");
  if (cdtype != 1 || crank != 1)
    throw detail::CheckpointError("malformed __config__ record");
  const auto clen = detail::read_pod<std::int64_t>(is, "config length");
  std::string config(static_cast<std::size_t>(clen), '\0');
  is.read(config.data(), clen);
  if (!is) throw detail::CheckpointError("checkpoint truncated while reading config");

  Model model = build_variant(parse_variant_config(config), /*seed=*/0);
  ParamList params = model.params();
  if (count != params.size() + 1)
    throw detail::CheckpointError("checkpoint holds " + std::to_string(count - 1) +
                                  " arrays but the model defines " +
                                  std::to_string(params.size()));
  for (std::size_t r = 0; r < params.size(); ++r) {
    const auto len = detail::read_pod<std::uint32_t>(is, "record name length");
    const std::string name = read_name(len);
    const auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
    const auto rank = detail::read_pod<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_pod<std::int64_t>(is, "extent");
    if (dtype != 0)
      throw detail::CheckpointError("record '" + name + "' has unexpected dtype");
    if (name != params[r].name || shape != params[r].tensor.shape())
      throw detail::CheckpointError(
          "record '" + name + "' with shape " + detail::shape_str(shape) +
          " does not match model entry '" + params[r].name + "' of shape " +
          detail::shape_str(params[r].tensor.shape()));
    is.read(reinterpret_cast<char*>(params[r].tensor.data()),
            static_cast<std::streamsize>(params[r].tensor.numel() * sizeof(double)));
    if (!is)
      throw detail::CheckpointError("checkpoint truncated inside record '" + name + "'");
  }
  return model;
}

}  // namespace eatformer
