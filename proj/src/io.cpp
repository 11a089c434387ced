#include "ntkrl/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace ntkrl::io {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_text_file(path));
}

namespace {

void put_i32(std::string& out, std::int32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::int32_t get_i32(std::string_view bytes, std::size_t offset) {
  std::int32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

constexpr std::size_t kHeaderBytes = 7 * 4;

}  // namespace

std::string serialize_params(const model::Params& p, const model::ModelConfig& cfg) {
  model::check_shape(p, cfg);
  if (!p.theta_phi.allFinite() || !p.classifier.allFinite())
    throw NumericError("serialize_params: non-finite parameter entries");
  std::string out;
  const std::size_t floats =
      static_cast<std::size_t>(p.theta_phi.size() + p.classifier.size());
  out.reserve(kHeaderBytes + floats * 8);
  put_i32(out, cfg.vocab_size);
  put_i32(out, cfg.feature_dim);
  put_i32(out, cfg.context_window);
  put_i32(out, cfg.hidden_width);
  put_i32(out, cfg.hidden_depth);
  put_i32(out, cfg.activation == model::Activation::linear ? 0 : 1);
  put_i32(out, kParamsFormatVersion);
  out.append(reinterpret_cast<const char*>(p.theta_phi.data()),
             static_cast<std::size_t>(p.theta_phi.size()) * 8);
  out.append(reinterpret_cast<const char*>(p.classifier.data()),
             static_cast<std::size_t>(p.classifier.size()) * 8);
  return out;
}

LoadedParams parse_params(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) throw IoError("params blob too short for header");
  LoadedParams lp;
  lp.cfg.vocab_size = get_i32(bytes, 0);
  lp.cfg.feature_dim = get_i32(bytes, 4);
  lp.cfg.context_window = get_i32(bytes, 8);
  lp.cfg.hidden_width = get_i32(bytes, 12);
  lp.cfg.hidden_depth = get_i32(bytes, 16);
  const std::int32_t act = get_i32(bytes, 20);
  if (act != 0 && act != 1) throw IoError("params blob: unknown activation tag");
  lp.cfg.activation = act == 0 ? model::Activation::linear : model::Activation::nonneg;
  const std::int32_t ver = get_i32(bytes, 24);
  if (ver != kParamsFormatVersion)
    throw IoError("params blob: unsupported format version " + std::to_string(ver));
  lp.cfg.seed = 0;
  model::validate(lp.cfg);

  const std::size_t theta_n = model::theta_size(lp.cfg);
  const std::size_t w_n =
      static_cast<std::size_t>(lp.cfg.vocab_size) * static_cast<std::size_t>(lp.cfg.feature_dim);
  if (bytes.size() != kHeaderBytes + (theta_n + w_n) * 8)
    throw IoError("params blob: size does not match header dimensions");

  lp.params.theta_phi = Vec(static_cast<Eigen::Index>(theta_n));
  std::memcpy(lp.params.theta_phi.data(), bytes.data() + kHeaderBytes, theta_n * 8);
  lp.params.classifier = RowMat(lp.cfg.vocab_size, lp.cfg.feature_dim);
  std::memcpy(lp.params.classifier.data(), bytes.data() + kHeaderBytes + theta_n * 8, w_n * 8);
  if (!lp.params.theta_phi.allFinite() || !lp.params.classifier.allFinite())
    throw IoError("params blob: non-finite entries");
  return lp;
}

nlohmann::json sidecar_json(const model::ModelConfig& cfg) {
  nlohmann::json groups = nlohmann::json::array();
  for (const model::ParamGroup& g : model::layout(cfg))
    groups.push_back({{"name", g.name}, {"offset", g.offset}, {"length", g.size}});
  return nlohmann::json{
      {"format_version", kParamsFormatVersion},
      {"header",
       {{"vocab_size", cfg.vocab_size},
        {"feature_dim", cfg.feature_dim},
        {"context_window", cfg.context_window},
        {"hidden_width", cfg.hidden_width},
        {"hidden_depth", cfg.hidden_depth},
        {"activation", cfg.activation == model::Activation::linear ? "linear" : "nonneg"}}},
      {"groups", groups},
      {"float_count",
       model::theta_size(cfg) + static_cast<std::size_t>(cfg.vocab_size) * cfg.feature_dim}};
}

void write_params_file(const std::filesystem::path& path, const model::Params& p,
                       const model::ModelConfig& cfg) {
  write_text_file(path, serialize_params(p, cfg));
  std::filesystem::path side = path;
  side += ".json";
  write_text_file(side, sidecar_json(cfg).dump(2) + "\n");
}

LoadedParams read_params_file(const std::filesystem::path& path) {
  return parse_params(read_text_file(path));
}

std::string params_digest(const model::Params& p, const model::ModelConfig& cfg) {
  return sha256_hex(serialize_params(p, cfg));
}

void write_floats(const std::filesystem::path& path, std::span<const double> values) {
  std::string bytes(reinterpret_cast<const char*>(values.data()), values.size() * 8);
  write_text_file(path, bytes);
}

std::vector<double> read_floats(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() % 8 != 0) throw IoError("float blob has trailing bytes: " + path.string());
  std::vector<double> out(bytes.size() / 8);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

}  // namespace ntkrl::io
