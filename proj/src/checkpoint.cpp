#include "xvt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "xvt/train.hpp"

namespace xvt {

namespace {

constexpr char kMagic[4] = {'X', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw FormatError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, ckpt.epochs_done);
  put_u64(buf, ckpt.adam_step);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& blob : ckpt.blobs) {
    put_u32(buf, static_cast<std::uint32_t>(blob.name.size()));
    buf.append(blob.name);
    put_u32(buf, static_cast<std::uint32_t>(blob.shape.size()));
    for (int d : blob.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    put_u64(buf, blob.data.size());
    for (float f : blob.data) put_u32(buf, std::bit_cast<std::uint32_t>(f));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string buf = ss.str();

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(buf, pos);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.epochs_done = get_u32(buf, pos);
  ckpt.adam_step = get_u64(buf, pos);
  const std::uint32_t blob_count = get_u32(buf, pos);
  for (std::uint32_t b = 0; b < blob_count; ++b) {
    CheckpointBlob blob;
    const std::uint32_t name_len = get_u32(buf, pos);
    if (pos + name_len > buf.size()) throw FormatError("checkpoint truncated");
    blob.name = buf.substr(pos, name_len);
    pos += name_len;
    const std::uint32_t rank = get_u32(buf, pos);
    for (std::uint32_t d = 0; d < rank; ++d) blob.shape.push_back(static_cast<int>(get_u32(buf, pos)));
    const std::uint64_t count = get_u64(buf, pos);
    blob.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) blob.data[i] = std::bit_cast<float>(get_u32(buf, pos));
    if (numel(blob.shape) != static_cast<std::int64_t>(count)) {
      throw FormatError("checkpoint blob '" + blob.name + "' has inconsistent shape");
    }
    ckpt.blobs.push_back(std::move(blob));
  }
  if (pos != buf.size()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

Checkpoint snapshot_model(Model<float>& model, const AdamState<float>* adam,
                          std::uint32_t epochs_done) {
  Checkpoint ckpt;
  ckpt.epochs_done = epochs_done;
  model.visit_state([&ckpt](const std::string& name, Tensor<float>& t) {
    ckpt.blobs.push_back({name, t.shape(), t.values()});
  });
  if (adam) {
    ckpt.adam_step = static_cast<std::uint64_t>(adam->step);
    std::size_t i = 0;
    model.visit_params([&ckpt, adam, &i](const std::string& name, Tensor<float>& t) {
      if (i < adam->m.size()) {
        ckpt.blobs.push_back({"adam.m." + name, t.shape(), adam->m[i]});
        ckpt.blobs.push_back({"adam.v." + name, t.shape(), adam->v[i]});
      }
      ++i;
    });
  }
  return ckpt;
}

void restore_model(Model<float>& model, AdamState<float>* adam, const Checkpoint& ckpt) {
  std::map<std::string, const CheckpointBlob*> by_name;
  for (const auto& blob : ckpt.blobs) by_name[blob.name] = &blob;

  std::size_t used = 0;
  model.visit_state([&by_name, &used](const std::string& name, Tensor<float>& t) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint does not match model: missing blob '" + name + "'");
    }
    if (it->second->shape != t.shape()) {
      throw ConfigError("checkpoint blob '" + name + "' has shape " +
                        shape_str(it->second->shape) + ", model expects " + shape_str(t.shape()));
    }
    t.values() = it->second->data;
    ++used;
  });

  if (adam) {
    adam->step = static_cast<std::int64_t>(ckpt.adam_step);
    adam->m.clear();
    adam->v.clear();
    bool have_moments = true;
    model.visit_params([&](const std::string& name, Tensor<float>& t) {
      const auto mit = by_name.find("adam.m." + name);
      const auto vit = by_name.find("adam.v." + name);
      if (mit == by_name.end() || vit == by_name.end()) {
        have_moments = false;
        return;
      }
      if (mit->second->shape != t.shape() || vit->second->shape != t.shape()) {
        throw ConfigError("checkpoint optimizer moments for '" + name + "' have wrong shape");
      }
      adam->m.push_back(mit->second->data);
      adam->v.push_back(vit->second->data);
      used += 2;
    });
    if (!have_moments) {
      throw ConfigError("checkpoint does not carry optimizer state for this model");
    }
  }
  // every blob must belong to this model (catches spec mismatches the other way)
  const std::size_t expected = adam ? by_name.size() : [&] {
    std::size_t state_blobs = 0;
    for (const auto& [name, blob] : by_name) {
      if (name.rfind("adam.", 0) != 0) ++state_blobs;
    }
    return state_blobs;
  }();
  if (used != expected) {
    throw ConfigError("checkpoint holds blobs that do not belong to this model spec");
  }
}

}  // namespace xvt
