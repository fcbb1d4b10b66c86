#pragma once

// Binary ModelBundle container:
//
//   "LDOBNDL\0"                      8-byte magic
//   u32 format version
//   u64 descriptor length, descriptor text (architecture, one network per line)
//   u32 tensor count, then per tensor:
//       u32 name length, name, u32 rank, u64 extents..., f32 values
//   u32 CRC-32 of every preceding byte
//
// All integers and floats are little-endian.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ldo/error.hpp"
#include "ldo/nets.hpp"

namespace ldo {

class bundle_version_error : public format_error {
 public:
  using format_error::format_error;
};

class bundle_checksum_error : public format_error {
 public:
  using format_error::format_error;
};

class bundle_shape_error : public format_error {
 public:
  using format_error::format_error;
};

namespace bundle_detail {

inline constexpr std::array<char, 8> kMagic{'L', 'D', 'O', 'B', 'N', 'D', 'L', '\0'};

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::none:
      break;
  }
  return "none";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "none") return Activation::none;
  throw format_error("bundle descriptor: unknown activation '" + s + "'");
}

inline std::string describe(const ModelBundle& bundle) {
  std::ostringstream out;
  out << "ldo-bundle " << ModelBundle::kFormatVersion << "\n";
  out << "n_out " << bundle.n_out << "\n";
  for (const Network* net : bundle.networks()) {
    const auto& d = net->descriptor;
    out << "network " << d.name << ' ' << (d.kind == NetworkKind::pointwise_maxpool ? "pointwise_maxpool" : "dense")
        << ' ' << d.input_width;
    for (const auto& l : d.layers) out << ' ' << l.width << ':' << activation_name(l.activation);
    out << "\n";
  }
  return out.str();
}

struct ParsedDescriptor {
  std::size_t n_out = 0;
  std::vector<NetworkDescriptor> networks;
};

inline ParsedDescriptor parse_descriptor(const std::string& text) {
  ParsedDescriptor parsed;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "ldo-bundle" || key.empty()) continue;
    if (key == "n_out") {
      fields >> parsed.n_out;
    } else if (key == "network") {
      NetworkDescriptor d;
      std::string kind;
      fields >> d.name >> kind >> d.input_width;
      if (!fields) throw format_error("bundle descriptor: malformed line '" + line + "'");
      if (kind == "pointwise_maxpool") {
        d.kind = NetworkKind::pointwise_maxpool;
      } else if (kind == "dense") {
        d.kind = NetworkKind::dense;
      } else {
        throw format_error("bundle descriptor: unknown network kind '" + kind + "'");
      }
      for (std::string layer; fields >> layer;) {
        const auto colon = layer.find(':');
        if (colon == std::string::npos) throw format_error("bundle descriptor: malformed layer '" + layer + "'");
        LayerSpec spec;
        try {
          spec.width = std::stoull(layer.substr(0, colon));
        } catch (const std::logic_error&) {
          throw format_error("bundle descriptor: malformed layer width '" + layer + "'");
        }
        spec.activation = parse_activation(layer.substr(colon + 1));
        d.layers.push_back(spec);
      }
      parsed.networks.push_back(std::move(d));
    } else {
      throw format_error("bundle descriptor: unknown key '" + key + "'");
    }
  }
  return parsed;
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.append(p, n);
  }
  template <class T>
  void little_endian(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buffer_.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
  void f32(float v) { little_endian(std::bit_cast<std::uint32_t>(v)); }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
  std::string& buffer() { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
  T little_endian() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }
  float f32() { return std::bit_cast<float>(little_endian<std::uint32_t>()); }
  std::string text(std::size_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw bundle_checksum_error("bundle: unexpected end of data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc(std::string_view data) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  constexpr std::size_t chunk = 1u << 30;
  for (std::size_t off = 0; off < data.size(); off += chunk) {
    const std::size_t n = std::min(chunk, data.size() - off);
    c = crc32(c, reinterpret_cast<const Bytef*>(data.data() + off), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(c);
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Writes the container without consistency checks.
inline std::string write_container(const std::string& descriptor, const std::vector<NamedTensor>& tensors,
                                   std::uint32_t version = ModelBundle::kFormatVersion) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.little_endian<std::uint32_t>(version);
  w.little_endian<std::uint64_t>(descriptor.size());
  w.text(descriptor);
  w.little_endian<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.little_endian<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.little_endian<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) w.little_endian<std::uint64_t>(e);
    for (float v : t.values) w.f32(v);
  }
  w.little_endian<std::uint32_t>(crc(w.buffer()));
  return std::move(w.buffer());
}

inline std::vector<NamedTensor> named_tensors(const ModelBundle& bundle) {
  std::vector<NamedTensor> out;
  for (const Network* net : bundle.networks()) {
    for (std::size_t i = 0; i < net->layers.size(); ++i) {
      const std::string prefix = net->descriptor.name + "." + std::to_string(i);
      out.push_back({prefix + ".weight", net->layers[i].weight});
      out.push_back({prefix + ".bias", net->layers[i].bias});
    }
  }
  return out;
}

}  // namespace bundle_detail

inline std::string serialize_bundle(const ModelBundle& bundle) {
  bundle.validate();
  return bundle_detail::write_container(bundle_detail::describe(bundle), bundle_detail::named_tensors(bundle));
}

inline ModelBundle deserialize_bundle(std::string_view data) {
  using namespace bundle_detail;
  constexpr std::size_t header = kMagic.size() + sizeof(std::uint32_t);
  if (data.size() < header || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0) {
    throw format_error("bundle: bad magic bytes");
  }
  Reader head(data.substr(kMagic.size()));
  const auto version = head.little_endian<std::uint32_t>();
  if (version != ModelBundle::kFormatVersion) {
    throw bundle_version_error("bundle: format version " + std::to_string(version) + ", expected " +
                               std::to_string(ModelBundle::kFormatVersion));
  }
  if (data.size() < header + sizeof(std::uint32_t)) throw bundle_checksum_error("bundle: truncated");
  const std::string_view body = data.substr(0, data.size() - sizeof(std::uint32_t));
  Reader tail(data.substr(body.size()));
  if (tail.little_endian<std::uint32_t>() != crc(body)) {
    throw bundle_checksum_error("bundle: checksum mismatch (truncated or corrupted file)");
  }

  Reader r(body.substr(header));
  const auto descriptor_size = r.little_endian<std::uint64_t>();
  const auto parsed = parse_descriptor(r.text(descriptor_size));
  const auto count = r.little_endian<std::uint32_t>();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name = r.text(r.little_endian<std::uint32_t>());
    const auto rank = r.little_endian<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.little_endian<std::uint64_t>());
    std::size_t n = 1;
    for (auto e : shape) {
      if (e == 0) throw bundle_shape_error("bundle: tensor '" + name + "' has a zero extent");
      n *= e;
    }
    if (n > r.remaining() / sizeof(float)) throw bundle_shape_error("bundle: tensor '" + name + "' exceeds file size");
    FloatBuffer values(n);
    for (auto& v : values) v = r.f32();
    tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw format_error("bundle: trailing bytes after tensors");

  ModelBundle bundle;
  bundle.n_out = parsed.n_out;
  auto slots = bundle.networks();
  if (parsed.networks.size() != slots.size()) {
    throw bundle_shape_error("bundle: descriptor lists " + std::to_string(parsed.networks.size()) +
                             " networks, expected 5");
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    Network& net = *slots[k];
    net.descriptor = parsed.networks[k];
    for (std::size_t i = 0; i < net.descriptor.layers.size(); ++i) {
      const std::string prefix = net.descriptor.name + "." + std::to_string(i);
      auto w = tensors.find(prefix + ".weight");
      auto b = tensors.find(prefix + ".bias");
      if (w == tensors.end() || b == tensors.end()) {
        throw bundle_shape_error("bundle: missing tensors for " + prefix);
      }
      net.layers.push_back({std::move(w->second), std::move(b->second)});
    }
  }
  try {
    bundle.validate();
  } catch (const dimension_error& e) {
    throw bundle_shape_error(std::string("bundle: descriptor does not match stored tensors: ") + e.what());
  }
  return bundle;
}

inline void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  const auto data = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw format_error("failed writing " + path.string());
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open " + path.string());
  const std::string data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_bundle(data);
}

/// CRC-32 of the canonical serialization; equal bundles have equal fingerprints.
inline std::uint32_t fingerprint(const ModelBundle& bundle) {
  return bundle_detail::crc(serialize_bundle(bundle));
}

}  // namespace ldo
