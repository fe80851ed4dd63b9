#include "legato/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace legato {

namespace {

constexpr char kMagic[8] = {'L', 'G', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

nlohmann::json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw TensorError("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t mlen = read_u64_le(in);
  std::string text(mlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw TensorError("checkpoint: truncated manifest in " + path.string());
  return nlohmann::json::parse(text);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const nlohmann::json& schema) {
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : store.entries()) {
    params.push_back({{"name", e.name},
                      {"shape", e.var.value().shape()},
                      {"offset", offset},
                      {"trainable", e.trainable}});
    offset += e.var.value().size() * sizeof(double);
  }
  nlohmann::json manifest = {{"schema_version", 1}, {"schema", schema}, {"params", params}};
  const std::string text = manifest.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorError("checkpoint: cannot write " + tmp.string());
    out.write(kMagic, 8);
    write_u64_le(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : store.entries()) {
      const Tensor& t = e.var.value();
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw TensorError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("checkpoint: cannot open " + path.string());
  nlohmann::json manifest = read_manifest(in, path);
  const std::streampos data_start = in.tellg();

  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name");
    const std::vector<std::size_t> shape = p.at("shape");
    if (!store.contains(name)) {
      throw TensorError("checkpoint: parameter '" + name + "' not present in model");
    }
    Var v = store.get(name);
    if (v.value().shape() != shape) {
      throw TensorError("checkpoint: shape mismatch for '" + name + "': file " +
                        shape_str(shape) + " vs model " + v.value().shape_str());
    }
    const std::uint64_t offset = p.at("offset");
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(v.value_mut().data()),
            static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    if (!in) throw TensorError("checkpoint: truncated data for '" + name + "'");
  }
  if (manifest.at("params").size() != store.size()) {
    throw TensorError("checkpoint: parameter count mismatch");
  }
  return {manifest.at("schema"), manifest};
}

nlohmann::json read_checkpoint_schema(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("checkpoint: cannot open " + path.string());
  return read_manifest(in, path).at("schema");
}

}  // namespace legato
