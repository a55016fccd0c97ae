#include "stylus/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "stylus/common.hpp"

namespace stylus::nn {

namespace {
constexpr char kMagic[8] = {'S', 'T', 'Y', 'C', 'K', 'P', 'T', '1'};
}

void Checkpoint::save(const std::string& path, const std::string& kind, const json& config, const json& extras,
                      const ParamStore& params) {
  json header;
  header["kind"] = kind;
  header["config"] = config;
  header["extras"] = extras;
  json index = json::array();
  for (const auto& [name, p] : params.entries()) {
    json t;
    t["name"] = name;
    json shape = json::array();
    for (int i = 0; i < p->shape.ndim; ++i) shape.push_back(p->shape.d[static_cast<std::size_t>(i)]);
    t["shape"] = shape;
    t["count"] = p->value.size();
    index.push_back(t);
  }
  header["tensors"] = index;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorClass::checkpoint, "cannot open checkpoint for writing: " + path);
  f.write(kMagic, 8);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, p] : params.entries()) {
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * static_cast<std::streamsize>(sizeof(real))));
  }
  if (!f) fail(ErrorClass::checkpoint, "short write: " + path);
}

namespace {

Checkpoint read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    fail(ErrorClass::checkpoint, "not a checkpoint file: " + path);
  }
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) fail(ErrorClass::checkpoint, "truncated checkpoint header: " + path);
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded()) fail(ErrorClass::checkpoint, "corrupt checkpoint header: " + path);
  Checkpoint c;
  c.kind = header.value("kind", "");
  c.config = header.value("config", json::object());
  c.extras = header.value("extras", json::object());
  c.config["__tensors"] = header["tensors"];  // stashed for load_into
  return c;
}

}  // namespace

Checkpoint Checkpoint::peek(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::checkpoint, "cannot open checkpoint: " + path);
  Checkpoint c = read_header(f, path);
  c.config.erase("__tensors");
  return c;
}

Checkpoint Checkpoint::load_into(const std::string& path, ParamStore& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorClass::checkpoint, "cannot open checkpoint: " + path);
  Checkpoint c = read_header(f, path);
  const json index = c.config["__tensors"];
  c.config.erase("__tensors");

  if (index.size() != params.entries().size()) {
    fail(ErrorClass::checkpoint, "checkpoint tensor count mismatch in " + path + ": file has " +
                                     std::to_string(index.size()) + ", model has " +
                                     std::to_string(params.entries().size()));
  }
  std::size_t i = 0;
  for (const auto& [name, p] : params.entries()) {
    const json& t = index[i++];
    if (t["name"].get<std::string>() != name) {
      fail(ErrorClass::checkpoint, "checkpoint tensor order mismatch: expected " + name + ", file has " +
                                       t["name"].get<std::string>());
    }
    if (t["count"].get<std::int64_t>() != p->value.size()) {
      fail(ErrorClass::checkpoint, "checkpoint tensor size mismatch for " + name);
    }
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.size() * static_cast<std::streamsize>(sizeof(real))));
  }
  if (!f) fail(ErrorClass::checkpoint, "truncated checkpoint blobs: " + path);
  return c;
}

}  // namespace stylus::nn
