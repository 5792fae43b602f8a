#include "dmlkit/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace dmlkit {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("tensor record truncated");
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (!t.defined()) throw IoError("cannot serialize an undefined tensor");
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad tensor record: wrong magic");
  }
  const std::uint32_t version = read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw IoError("unsupported tensor record version " + std::to_string(version));
  }
  const std::uint32_t ndim = read_pod<std::uint32_t>(is);
  if (ndim == 0 || ndim > 8) {
    throw IoError("implausible tensor rank " + std::to_string(ndim));
  }
  Shape shape(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
  }
  std::vector<double> data(numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw IoError("tensor payload truncated");
  return Tensor(std::move(shape), std::move(data));
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, &t).second) {
      throw IoError("duplicate tensor name in checkpoint: " + name);
    }
  }

  std::ostringstream records;
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& [name, t] : by_name) {
    manifest[name] = static_cast<std::uint64_t>(records.tellp());
    write_tensor(records, *t);
  }
  const std::string manifest_str = manifest.dump();
  const std::string record_str = records.str();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  write_pod<std::uint64_t>(os, manifest_str.size());
  os.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  os.write(record_str.data(), static_cast<std::streamsize>(record_str.size()));
  if (!os) throw IoError("checkpoint write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  const std::uint64_t manifest_len = read_pod<std::uint64_t>(is);
  std::string manifest_str(manifest_len, '\0');
  is.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
  if (!is) throw IoError("checkpoint manifest truncated: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  const std::streampos records_start = is.tellg();

  NamedTensors out;
  for (const auto& [name, offset] : manifest.items()) {
    is.seekg(records_start + static_cast<std::streamoff>(offset.get<std::uint64_t>()));
    if (!is) throw IoError("bad offset for tensor " + name);
    out.emplace_back(name, read_tensor(is));
  }
  return out;
}

}  // namespace dmlkit
