#include "ssar/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "ssar/errors.hpp"

namespace ssar {
namespace {

constexpr char kMagic[] = "SSAR1";
constexpr std::size_t kMagicLen = 5;

void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

void put_f32(std::ostream& os, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 4);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open weights file " + path.string());
  }

  void read_bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("weights file " + path_.string() + " is truncated");
  }

  std::uint64_t u64() {
    unsigned char b[8];
    read_bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::string text(std::uint64_t n) {
    if (n > (1u << 24)) throw DataError("weights file " + path_.string() + " has an implausible string length");
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }

  void f32s(std::vector<float>& out) {
    std::vector<unsigned char> raw(out.size() * 4);
    read_bytes(reinterpret_cast<char*>(raw.data()), raw.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 3; k >= 0; --k) bits = (bits << 8) | raw[4 * i + k];
      out[i] = std::bit_cast<float>(bits);
    }
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

struct StoredParam {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct StoredFile {
  std::map<std::string, std::string> descriptor;
  std::vector<StoredParam> params;
};

std::map<std::string, std::string> parse_descriptor(const std::string& text) {
  std::map<std::string, std::string> d;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed descriptor line '" + line + "'");
    d[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return d;
}

StoredFile read_file(const std::filesystem::path& path, bool with_values) {
  Reader r(path);
  char magic[kMagicLen];
  r.read_bytes(magic, kMagicLen);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw DataError(path.string() + " is not an SSAR1 weights file (unsupported version or format)");
  }
  StoredFile f;
  f.descriptor = parse_descriptor(r.text(r.u64()));
  if (!with_values) return f;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredParam p;
    p.name = r.text(r.u64());
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw DataError("parameter " + p.name + " has implausible rank " + std::to_string(rank));
    for (std::uint64_t d = 0; d < rank; ++d) p.shape.push_back(static_cast<std::size_t>(r.u64()));
    const std::size_t n = shape_numel(p.shape);
    if (n > (std::size_t{1} << 31)) throw DataError("parameter " + p.name + " is implausibly large");
    p.values.resize(n);
    r.f32s(p.values);
    f.params.push_back(std::move(p));
  }
  if (!r.at_end()) throw DataError("weights file " + path.string() + " has trailing bytes");
  return f;
}

template <typename T>
void assign(AgeModel<T>& model, const StoredFile& file, const std::filesystem::path& path) {
  auto params = model.parameters();
  std::ostringstream diff;
  const std::size_t n = std::max(params.size(), file.params.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= params.size()) {
      diff << "\n  " << file.params[i].name << ": file " << to_string(file.params[i].shape) << " vs model (absent)";
    } else if (i >= file.params.size()) {
      diff << "\n  " << params[i].name << ": file (absent) vs model " << to_string(params[i].tensor.shape());
    } else if (params[i].name != file.params[i].name || params[i].tensor.shape() != file.params[i].shape) {
      diff << "\n  " << params[i].name << ": file " << file.params[i].name << " " << to_string(file.params[i].shape)
           << " vs model " << to_string(params[i].tensor.shape());
    }
  }
  if (!diff.str().empty()) {
    throw ConfigError("architecture mismatch loading " + path.string() + ":" + diff.str());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    const auto& src = file.params[i].values;
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<T>(src[k]);
  }
}

}  // namespace

template <typename T>
void save_weights(const AgeModel<T>& model, const std::filesystem::path& path,
                  const std::map<std::string, std::string>& extra) {
  auto descriptor = model.descriptor();
  for (const auto& [k, v] : extra) {
    if (descriptor.count(k)) throw ConfigError("weights metadata key '" + k + "' collides with the architecture");
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("weights metadata '" + k + "' contains '=' or a newline");
    }
    descriptor[k] = v;
  }
  std::string text;
  for (const auto& [k, v] : descriptor) text += k + "=" + v + "\n";

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write weights file " + path.string());
  os.write(kMagic, kMagicLen);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  put_u64(os, params.size());
  for (const auto& p : params) {
    put_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u64(os, p.tensor.rank());
    for (auto e : p.tensor.shape()) put_u64(os, e);
    for (T v : p.tensor.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw DataError("failed writing weights file " + path.string());
}

LoadedModel load_weights(const std::filesystem::path& path) {
  StoredFile file = read_file(path, true);
  LoadedModel out;
  out.model = make_model<float>(file.descriptor);
  assign(*out.model, file, path);
  out.descriptor = std::move(file.descriptor);
  return out;
}

template <typename T>
void load_weights_into(AgeModel<T>& model, const std::filesystem::path& path) {
  StoredFile file = read_file(path, true);
  assign(model, file, path);
}

std::map<std::string, std::string> read_weights_descriptor(const std::filesystem::path& path) {
  return read_file(path, false).descriptor;
}

template void save_weights<float>(const AgeModel<float>&, const std::filesystem::path&,
                                  const std::map<std::string, std::string>&);
template void save_weights<double>(const AgeModel<double>&, const std::filesystem::path&,
                                   const std::map<std::string, std::string>&);
template void load_weights_into<float>(AgeModel<float>&, const std::filesystem::path&);
template void load_weights_into<double>(AgeModel<double>&, const std::filesystem::path&);

}  // namespace ssar
