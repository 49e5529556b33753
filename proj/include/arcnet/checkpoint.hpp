#pragma once

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/errors.hpp"
#include "arcnet/model.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/serial.hpp"
#include "arcnet/tensor.hpp"

// Checkpoint container, magic "ARCC", version 1, little-endian. Layout:
//
//   "ARCC"  u32 version
//   u32 tensor count, then per tensor:
//     u16 name length, UTF-8 name, u8 rank, u64 dims[rank], f32 data row-major
//   footer: u32 epoch, f32 validation loss, 32-byte config hash
//
// Tensors appear in a fixed order: the eight model parameter tensors, then
// "caps.routing" ([2], iteration count and soft-update coefficient) and
// "rng.state" ([16], the generator's four 64-bit words split into 16-bit
// half-words, each stored exactly as a f32). The fixed order makes
// save -> load -> save byte-identical.

namespace arcnet {

inline constexpr std::uint32_t kArccVersion = 1;

inline std::array<std::uint8_t, 32> sha256(const void* data, std::size_t n) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, data, n) == 1 &&
                  EVP_DigestFinal_ex(ctx, out.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok || len != out.size()) throw Error("sha256 computation failed");
  return out;
}

inline std::array<std::uint8_t, 32> sha256(const std::string& text) {
  return sha256(text.data(), text.size());
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  int epoch = 0;
  float val_loss = 0.0f;
  std::array<std::uint64_t, 4> rng_state{};
  std::array<std::uint8_t, 32> config_hash{};
};

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u16(os, static_cast<std::uint16_t>(name.size()));
  put_bytes(os, name.data(), name.size());
  os.put(static_cast<char>(t.rank()));
  for (const int d : t.shape) put_u64(os, static_cast<std::uint64_t>(d));
  for (const float v : t.data) put_f32(os, v);
}

inline Tensor read_tensor(std::istream& is, const std::string& expect_name) {
  const std::uint16_t name_len = take_u16(is, "tensor name length");
  std::string name(name_len, '\0');
  take_bytes(is, name.data(), name_len, "tensor name");
  if (name != expect_name)
    throw DataError("checkpoint tensor '" + name + "' where '" + expect_name + "' was expected");
  unsigned char rank = 0;
  take_bytes(is, &rank, 1, "tensor rank");
  if (rank == 0 || rank > 4) throw DataError("checkpoint tensor '" + name + "' has bad rank");
  Shape shape;
  std::size_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint64_t d = take_u64(is, "tensor dimension");
    if (d == 0 || d > (1u << 24)) throw DataError("checkpoint tensor '" + name + "' has bad dims");
    numel *= d;
    if (numel > (1u << 28)) throw DataError("checkpoint tensor '" + name + "' is too large");
    shape.push_back(static_cast<int>(d));
  }
  Tensor t(shape);
  for (auto& v : t.data) v = take_f32(is, "tensor data");
  return t;
}

inline void require_shape(const Tensor& t, const Shape& want, const std::string& name) {
  if (t.shape != want)
    throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                    ", expected " + shape_str(want));
}

}  // namespace detail

// The generator's four 64-bit words as 16 exactly-representable floats.
inline std::array<float, 16> rng_state_to_f32(const std::array<std::uint64_t, 4>& state) {
  std::array<float, 16> out{};
  for (int w = 0; w < 4; ++w)
    for (int h = 0; h < 4; ++h)
      out[static_cast<std::size_t>(w * 4 + h)] =
          static_cast<float>((state[static_cast<std::size_t>(w)] >> (16 * h)) & 0xffff);
  return out;
}

inline std::array<std::uint64_t, 4> rng_state_from_f32(const std::array<float, 16>& halves) {
  std::array<std::uint64_t, 4> state{};
  for (int w = 0; w < 4; ++w)
    for (int h = 0; h < 4; ++h) {
      const float v = halves[static_cast<std::size_t>(w * 4 + h)];
      if (!(v >= 0.0f && v <= 65535.0f && v == std::floor(v)))
        throw DataError("checkpoint rng.state entry is not a 16-bit word");
      state[static_cast<std::size_t>(w)] |= static_cast<std::uint64_t>(v) << (16 * h);
    }
  return state;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto& cfg = ckpt.config;
  if (cfg.n_imu < 1 || cfg.n_classes < 1 || cfg.d_out < 1 || cfg.r < 1 || !(cfg.eta > 0.0f))
    throw ConfigError("checkpoint carries an invalid model configuration");
  detail::require_shape(ckpt.params.caps.w, {cfg.caps_in(), cfg.n_classes, kCapsDim, cfg.d_out},
                        "caps.w");
  detail::require_shape(ckpt.params.caps.b, {cfg.caps_in(), cfg.n_classes}, "caps.b");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  detail::put_bytes(os, "ARCC", 4);
  detail::put_u32(os, kArccVersion);

  const auto named = ckpt.params.named_tensors();
  detail::put_u32(os, static_cast<std::uint32_t>(named.size()) + 2);
  for (const auto& [name, tensor] : named) detail::write_tensor(os, name, *tensor);

  Tensor routing({2});
  routing.data[0] = static_cast<float>(cfg.r);
  routing.data[1] = cfg.eta;
  detail::write_tensor(os, "caps.routing", routing);

  Tensor rng_words({16});
  const auto halves = rng_state_to_f32(ckpt.rng_state);
  std::copy(halves.begin(), halves.end(), rng_words.data.begin());
  detail::write_tensor(os, "rng.state", rng_words);

  detail::put_u32(os, static_cast<std::uint32_t>(ckpt.epoch));
  detail::put_f32(os, ckpt.val_loss);
  detail::put_bytes(os, ckpt.config_hash.data(), ckpt.config_hash.size());
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4] = {};
  detail::take_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "ARCC") throw DataError("not a checkpoint file: " + path);
  const std::uint32_t version = detail::take_u32(is, "version");
  if (version != kArccVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t count = detail::take_u32(is, "tensor count");
  if (count != 10)
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, expected 10");

  Checkpoint ckpt;
  auto named = ckpt.params.named_tensors();
  for (auto& [name, tensor] : named) *tensor = detail::read_tensor(is, name);
  const Tensor routing = detail::read_tensor(is, "caps.routing");
  const Tensor rng_words = detail::read_tensor(is, "rng.state");

  // Reconstruct the architecture from the stored shapes.
  detail::require_shape(routing, {2}, "caps.routing");
  detail::require_shape(rng_words, {16}, "rng.state");
  const auto& w = ckpt.params.caps.w;
  if (w.rank() != 4 || w.dim(2) != kCapsDim || w.dim(0) % kCapsPerImu != 0)
    throw DataError("checkpoint tensor 'caps.w' has shape " + shape_str(w.shape) +
                    ", expected [12n, C, 96, d_out]");
  ckpt.config.n_imu = w.dim(0) / kCapsPerImu;
  ckpt.config.n_classes = w.dim(1);
  ckpt.config.d_out = w.dim(3);
  const float r_raw = routing.data[0];
  if (!(r_raw >= 1.0f && r_raw == std::floor(r_raw)))
    throw DataError("checkpoint routing iteration count is not a positive integer");
  ckpt.config.r = static_cast<int>(r_raw);
  ckpt.config.eta = routing.data[1];
  if (!(ckpt.config.eta > 0.0f)) throw DataError("checkpoint soft-update coefficient is not positive");
  ckpt.params.caps.r = ckpt.config.r;
  ckpt.params.caps.eta = ckpt.config.eta;

  detail::require_shape(ckpt.params.enc.k1, {64, 1, 1, 9}, "enc.k1");
  detail::require_shape(ckpt.params.enc.b1, {64}, "enc.b1");
  detail::require_shape(ckpt.params.enc.k2, {96, 64, 3, 20}, "enc.k2");
  detail::require_shape(ckpt.params.enc.b2, {96}, "enc.b2");
  detail::require_shape(ckpt.params.enc.k3, {96, 96, 2, 15}, "enc.k3");
  detail::require_shape(ckpt.params.enc.b3, {96}, "enc.b3");
  detail::require_shape(ckpt.params.caps.b, {ckpt.config.caps_in(), ckpt.config.n_classes},
                        "caps.b");
  for (auto& [name, tensor] : named)
    if (!tensor->all_finite())
      throw DataError("checkpoint tensor '" + name + "' contains non-finite values");

  std::array<float, 16> halves{};
  std::copy(rng_words.data.begin(), rng_words.data.end(), halves.begin());
  ckpt.rng_state = rng_state_from_f32(halves);

  ckpt.epoch = static_cast<int>(detail::take_u32(is, "epoch"));
  ckpt.val_loss = detail::take_f32(is, "validation loss");
  detail::take_bytes(is, ckpt.config_hash.data(), ckpt.config_hash.size(), "config hash");
  if (is.peek() != std::char_traits<char>::eof())
    throw DataError("trailing bytes after checkpoint footer: " + path);
  return ckpt;
}

}  // namespace arcnet
