#include "stun/model_io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stun/error.hpp"

namespace stun {
namespace {

using nlohmann::json;

constexpr std::string_view kModelMagic = "STUNMOE1";
constexpr std::string_view kCalibMagic = "STUNCAL1";
constexpr std::size_t kPrefix = 16;  // magic + header length
constexpr std::size_t kTrailer = 8;  // blob crc + header crc

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t padded_bits(std::size_t n) { return ((n + 31) / 32) * 4; }

// Appends a tensor's float32 payload and returns its directory entry.
TensorEntry put_tensor(std::vector<std::uint8_t>& blob, std::string name, const Tensor2& t) {
  TensorEntry e{std::move(name), blob.size(), t.rows(), t.cols(), false};
  for (double v : t.values()) put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return e;
}

TensorEntry put_mask(std::vector<std::uint8_t>& blob, std::string name, const BitMask& m) {
  TensorEntry e{std::move(name), blob.size(), m.rows, m.cols, true};
  std::vector<std::uint8_t> packed(padded_bits(m.bits.size()), 0);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    if (m.bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  blob.insert(blob.end(), packed.begin(), packed.end());
  return e;
}

json entry_json(const TensorEntry& e) {
  return json{{"name", e.name},
              {"offset", e.offset},
              {"rows", e.rows},
              {"cols", e.cols},
              {"dtype", e.bitmask ? "bit" : "f32"}};
}

TensorEntry entry_from_json(const json& j) {
  TensorEntry e;
  e.name = j.at("name").get<std::string>();
  e.offset = j.at("offset").get<std::uint64_t>();
  e.rows = j.at("rows").get<std::size_t>();
  e.cols = j.at("cols").get<std::size_t>();
  const auto dtype = j.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "bit") throw FormatError("unknown dtype '" + dtype + "'");
  e.bitmask = dtype == "bit";
  return e;
}

std::vector<std::uint8_t> assemble(std::string_view magic, const json& header,
                                   const std::vector<std::uint8_t>& blob) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(kPrefix + text.size() + blob.size() + kTrailer);
  out.insert(out.end(), magic.begin(), magic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  put_u32(out, crc32_of(blob));
  put_u32(out, crc32_of({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
  return out;
}

struct Parsed {
  json header;
  std::span<const std::uint8_t> blob;
};

std::size_t header_length(std::span<const std::uint8_t> bytes, std::string_view magic) {
  if (bytes.size() < kPrefix) throw ChecksumError("file too short for container prefix");
  if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw FormatError("bad magic, expected " + std::string(magic));
  }
  return get_u64(bytes, magic.size());
}

json parse_header(std::span<const std::uint8_t> text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
}

void check_version(const json& header, std::string_view format) {
  if (!header.is_object() || header.value("format", std::string{}) != format) {
    throw FormatError("header format is not " + std::string(format));
  }
  const int version = header.value("version", -1);
  if (version != kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
}

Parsed parse_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                       std::string_view format) {
  const std::uint64_t h = header_length(bytes, magic);
  if (h > bytes.size() || kPrefix + h + kTrailer > bytes.size()) {
    throw ChecksumError("declared header length exceeds file size");
  }
  const auto text = bytes.subspan(kPrefix, h);
  const auto blob = bytes.subspan(kPrefix + h, bytes.size() - kPrefix - h - kTrailer);
  const std::size_t tail = bytes.size() - kTrailer;
  if (crc32_of(text) != get_u32(bytes, tail + 4)) throw ChecksumError("header CRC mismatch");
  if (crc32_of(blob) != get_u32(bytes, tail)) throw ChecksumError("blob CRC mismatch");

  Parsed p{parse_header(text), blob};
  check_version(p.header, format);
  if (p.header.value("blob_size", std::uint64_t{0}) != blob.size()) {
    throw ChecksumError("blob length does not match header");
  }
  return p;
}

std::vector<TensorEntry> read_directory(const json& header, std::uint64_t blob_size) {
  std::vector<TensorEntry> dir;
  std::uint64_t expected = 0;
  for (const auto& j : header.at("tensors")) {
    TensorEntry e = entry_from_json(j);
    if (e.offset != expected) throw FormatError("tensor '" + e.name + "' is out of order");
    expected += e.byte_size();
    if (expected > blob_size) throw ChecksumError("tensor '" + e.name + "' overruns the blob");
    dir.push_back(std::move(e));
  }
  if (expected != blob_size) throw ChecksumError("blob has trailing bytes");
  return dir;
}

Tensor2 get_tensor(std::span<const std::uint8_t> blob, const TensorEntry& e) {
  if (e.bitmask) throw FormatError("tensor '" + e.name + "' is a mask");
  std::vector<double> data(e.rows * e.cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(blob, e.offset + 4 * i)));
  }
  try {
    return Tensor2(e.rows, e.cols, std::move(data));
  } catch (const ArgumentError&) {
    throw FormatError("tensor '" + e.name + "' holds non-finite values");
  }
}

BitMask get_mask(std::span<const std::uint8_t> blob, const TensorEntry& e) {
  if (!e.bitmask) throw FormatError("tensor '" + e.name + "' is not a mask");
  BitMask m(e.rows, e.cols);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    m.bits[i] = (blob[e.offset + i / 8] >> (i % 8)) & 1u;
  }
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ModelHeader header_from_json(const json& j, std::vector<TensorEntry> dir) {
  ModelHeader h;
  h.version = j.at("version").get<int>();
  h.name = j.at("name").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.model_dim = j.at("model_dim").get<std::size_t>();
  h.flags.renormalize = j.at("flags").at("renormalize").get<bool>();
  h.flags.residual = j.at("flags").at("residual").get<bool>();
  for (const auto& lj : j.at("layers")) {
    LayerHeader lh;
    lh.experts = lj.at("experts").get<std::size_t>();
    lh.hidden_dim = lj.at("hidden_dim").get<std::size_t>();
    lh.top_k = lj.at("top_k").get<std::size_t>();
    for (const auto& a : lj.at("activations")) {
      lh.activations.push_back(activation_from_string(a.get<std::string>()));
    }
    if (lh.activations.size() != lh.experts) throw FormatError("activation list length");
    h.layers.push_back(std::move(lh));
  }
  h.tensors = std::move(dir);
  h.blob_size = j.at("blob_size").get<std::uint64_t>();
  return h;
}

template <typename Fn>
auto guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header field error: ") + e.what());
  }
}

}  // namespace

std::uint64_t TensorEntry::byte_size() const noexcept {
  return bitmask ? padded_bits(rows * cols) : static_cast<std::uint64_t>(rows) * cols * 4;
}

std::vector<std::uint8_t> encode_model(const MoeModel& model) {
  model.validate();
  std::vector<std::uint8_t> blob;
  json tensors = json::array();
  json layers = json::array();
  for (std::size_t m = 0; m < model.layers.size(); ++m) {
    const auto& layer = model.layers[m];
    tensors.push_back(entry_json(put_tensor(blob, router_name(m), layer.router)));
    json acts = json::array();
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
      const auto& e = layer.experts[i];
      tensors.push_back(entry_json(put_tensor(blob, tensor_name(m, i, ExpertMatrix::w_in), e.w_in)));
      tensors.push_back(entry_json(put_tensor(blob, tensor_name(m, i, ExpertMatrix::w_out), e.w_out)));
      acts.push_back(std::string(to_string(e.activation)));
    }
    layers.push_back(json{{"experts", layer.experts.size()},
                          {"hidden_dim", layer.experts.front().hidden_dim()},
                          {"top_k", layer.top_k},
                          {"activations", std::move(acts)}});
  }
  for (const auto& [name, mask] : model.masks) {
    tensors.push_back(entry_json(put_mask(blob, name + ".mask", mask)));
  }

  json header{{"format", "STUNMOE"},
              {"version", kFormatVersion},
              {"name", model.meta.name},
              {"seed", model.meta.seed},
              {"model_dim", model.model_dim},
              {"activation", std::string(to_string(model.layers.front().experts.front().activation))},
              {"flags",
               {{"renormalize", model.meta.flags.renormalize},
                {"residual", model.meta.flags.residual}}},
              {"layers", std::move(layers)},
              {"planted", model.meta.planted ? json(*model.meta.planted) : json(nullptr)},
              {"original_parameters", model.meta.original_parameters
                                          ? json(*model.meta.original_parameters)
                                          : json(nullptr)},
              {"expert_sparsity",
               model.meta.expert_sparsity ? json(*model.meta.expert_sparsity) : json(nullptr)},
              {"global_sparsity",
               model.meta.global_sparsity ? json(*model.meta.global_sparsity) : json(nullptr)},
              {"tensors", std::move(tensors)},
              {"blob_size", blob.size()}};
  return assemble(kModelMagic, header, blob);
}

MoeModel decode_model(std::span<const std::uint8_t> bytes) {
  const Parsed p = parse_container(bytes, kModelMagic, "STUNMOE");
  return guarded([&] {
    const auto dir = read_directory(p.header, p.blob.size());
    const ModelHeader h = header_from_json(p.header, dir);

    MoeModel model;
    model.model_dim = h.model_dim;
    model.meta.name = h.name;
    model.meta.seed = h.seed;
    model.meta.flags = h.flags;
    const auto& j = p.header;
    if (!j.at("planted").is_null()) {
      model.meta.planted = j.at("planted").get<std::vector<std::vector<std::size_t>>>();
    }
    if (!j.at("original_parameters").is_null()) {
      model.meta.original_parameters = j.at("original_parameters").get<std::size_t>();
    }
    if (!j.at("expert_sparsity").is_null()) {
      model.meta.expert_sparsity = j.at("expert_sparsity").get<double>();
    }
    if (!j.at("global_sparsity").is_null()) {
      model.meta.global_sparsity = j.at("global_sparsity").get<double>();
    }

    std::size_t next = 0;
    auto take = [&](const std::string& name) -> const TensorEntry& {
      if (next >= dir.size() || dir[next].name != name) {
        throw FormatError("expected tensor '" + name + "' in directory");
      }
      return dir[next++];
    };
    for (std::size_t m = 0; m < h.layers.size(); ++m) {
      const auto& lh = h.layers[m];
      MoeLayer layer;
      layer.top_k = lh.top_k;
      layer.router = get_tensor(p.blob, take(router_name(m)));
      for (std::size_t i = 0; i < lh.experts; ++i) {
        ExpertParams e;
        e.w_in = get_tensor(p.blob, take(tensor_name(m, i, ExpertMatrix::w_in)));
        e.w_out = get_tensor(p.blob, take(tensor_name(m, i, ExpertMatrix::w_out)));
        e.activation = lh.activations[i];
        layer.experts.push_back(std::move(e));
      }
      model.layers.push_back(std::move(layer));
    }
    for (; next < dir.size(); ++next) {
      const auto& e = dir[next];
      constexpr std::string_view suffix = ".mask";
      if (e.name.size() <= suffix.size() ||
          e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        throw FormatError("unexpected tensor '" + e.name + "'");
      }
      model.masks.emplace(e.name.substr(0, e.name.size() - suffix.size()), get_mask(p.blob, e));
    }
    try {
      model.validate();
    } catch (const Error& e) {
      throw FormatError(std::string("decoded model is inconsistent: ") + e.what());
    }
    return model;
  });
}

void save_model(const MoeModel& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}

MoeModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

ModelHeader read_model_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<std::uint8_t, kPrefix> prefix{};
  in.read(reinterpret_cast<char*>(prefix.data()), prefix.size());
  if (in.gcount() != static_cast<std::streamsize>(prefix.size())) {
    throw ChecksumError("file too short for container prefix");
  }
  const std::uint64_t h = header_length(prefix, kModelMagic);
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  if (h > file_size || kPrefix + h + kTrailer > file_size) {
    throw ChecksumError("declared header length exceeds file size");
  }
  std::vector<std::uint8_t> text(h);
  in.seekg(static_cast<std::streamoff>(kPrefix));
  in.read(reinterpret_cast<char*>(text.data()), static_cast<std::streamsize>(h));
  std::array<std::uint8_t, 4> crc{};
  in.seekg(static_cast<std::streamoff>(file_size - 4));
  in.read(reinterpret_cast<char*>(crc.data()), 4);
  if (!in) throw IoError("read failed for " + path.string());
  if (crc32_of(text) != get_u32(crc, 0)) throw ChecksumError("header CRC mismatch");

  const json header = parse_header(text);
  check_version(header, "STUNMOE");
  return guarded([&] {
    std::vector<TensorEntry> dir;
    for (const auto& j : header.at("tensors")) dir.push_back(entry_from_json(j));
    return header_from_json(header, std::move(dir));
  });
}

std::vector<std::uint8_t> encode_calibration(const CalibrationSet& data) {
  std::vector<std::uint8_t> blob;
  json tensors = json::array();
  const std::size_t dim = data.model_dim();
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    if (data.samples[s].cols() != dim) throw ShapeError("calibration samples differ in width");
    tensors.push_back(entry_json(put_tensor(blob, "sample" + std::to_string(s), data.samples[s])));
  }
  json header{{"format", "STUNCAL"},
              {"version", kFormatVersion},
              {"model_dim", dim},
              {"count", data.samples.size()},
              {"tensors", std::move(tensors)},
              {"blob_size", blob.size()}};
  return assemble(kCalibMagic, header, blob);
}

CalibrationSet decode_calibration(std::span<const std::uint8_t> bytes) {
  const Parsed p = parse_container(bytes, kCalibMagic, "STUNCAL");
  return guarded([&] {
    const auto dir = read_directory(p.header, p.blob.size());
    const auto dim = p.header.at("model_dim").get<std::size_t>();
    if (p.header.at("count").get<std::size_t>() != dir.size()) {
      throw FormatError("sample count does not match directory");
    }
    CalibrationSet set;
    for (std::size_t s = 0; s < dir.size(); ++s) {
      if (dir[s].name != "sample" + std::to_string(s) || dir[s].cols != dim) {
        throw FormatError("unexpected calibration tensor '" + dir[s].name + "'");
      }
      set.samples.push_back(get_tensor(p.blob, dir[s]));
    }
    return set;
  });
}

void save_calibration(const CalibrationSet& data, const std::filesystem::path& path) {
  write_file(path, encode_calibration(data));
}

CalibrationSet load_calibration(const std::filesystem::path& path) {
  return decode_calibration(read_file(path));
}

}  // namespace stun
