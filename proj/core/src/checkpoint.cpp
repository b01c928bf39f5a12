#include "mocha/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include <openssl/evp.h>
#include <openssl/sha.h>

#include "mocha/errors.hpp"

namespace mocha::checkpoint {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads assume a little-endian host");

std::string to_bytes(std::span<const double> values) {
  std::string bytes(values.size() * sizeof(float), '\0');
  for (std::size_t k = 0; k < values.size(); ++k) {
    const float f = static_cast<float>(values[k]);
    std::memcpy(bytes.data() + k * sizeof(float), &f, sizeof(float));
  }
  return bytes;
}

std::vector<double> from_bytes(const std::string& bytes) {
  std::vector<double> out(bytes.size() / sizeof(float));
  for (std::size_t k = 0; k < out.size(); ++k) {
    float f;
    std::memcpy(&f, bytes.data() + k * sizeof(float), sizeof(float));
    out[k] = f;
  }
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text, std::size_t expected, const std::string& what) {
  if (text.size() % 4 != 0) throw DataError("checkpoint: corrupt payload for " + what);
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0 || static_cast<std::size_t>(n) < expected)
    throw DataError("checkpoint: corrupt payload for " + what);
  out.resize(expected);  // drop the padding bytes EVP_DecodeBlock keeps
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

json encode_array(const ag::Shape& shape, std::span<const double> values) {
  const std::string bytes = to_bytes(values);
  return {{"shape", shape}, {"data", base64_encode(bytes)}, {"sha256", sha256_hex(bytes)}};
}

std::vector<double> decode_array(const json& j, const std::string& what, ag::Shape* shape_out) {
  ag::Shape shape;
  std::string data, digest;
  try {
    shape = j.at("shape").get<ag::Shape>();
    data = j.at("data").get<std::string>();
    digest = j.at("sha256").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed array " + what + ": " + e.what());
  }
  const std::size_t n = ag::shape_size(shape);
  const std::string bytes = base64_decode(data, n * sizeof(float), what);
  if (sha256_hex(bytes) != digest) throw DataError("checkpoint: checksum mismatch for " + what);
  if (shape_out) *shape_out = shape;
  return from_bytes(bytes);
}

}  // namespace

std::string serialize(const Checkpoint& ck) {
  json j;
  j["format"] = "mocha-checkpoint";
  j["version"] = ck.version;
  j["config"] = json::parse(training::to_json_text(ck.config));
  j["step"] = ck.adam.step;
  j["params"] = json::object();
  for (const auto& [name, t] : ck.params.all()) j["params"][name] = encode_array(t.shape(), t.data());
  j["adam"] = json::object();
  for (const auto& [name, mom] : ck.adam.moments)
    j["adam"][name] = {{"m", encode_array({mom.m.size()}, mom.m)},
                       {"v", encode_array({mom.v.size()}, mom.v)}};
  return j.dump(1) + "\n";
}

Checkpoint deserialize(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint: not a checkpoint file (") + e.what() + ")");
  }
  if (!j.is_object() || j.value("format", "") != "mocha-checkpoint")
    throw DataError("checkpoint: missing format marker");
  const int version = j.value("version", -1);
  if (version != kFormatVersion)
    throw DataError("checkpoint: format version " + std::to_string(version) + ", expected " +
                    std::to_string(kFormatVersion));
  Checkpoint ck;
  ck.version = version;
  if (!j.contains("config") || !j.contains("params"))
    throw DataError("checkpoint: missing config or params section");
  ck.config = training::from_json_text(j.at("config").dump());
  ck.adam.step = j.value("step", std::uint64_t{0});
  for (const auto& [name, arr] : j.at("params").items()) {
    ag::Shape shape;
    auto values = decode_array(arr, name, &shape);
    ck.params.add(name, shape, std::move(values));
  }
  if (j.contains("adam"))
    for (const auto& [name, mv] : j.at("adam").items()) {
      if (!mv.contains("m") || !mv.contains("v"))
        throw DataError("checkpoint: malformed optimizer state for " + name);
      ck.adam.moments[name] = {decode_array(mv.at("m"), name + ".m", nullptr),
                               decode_array(mv.at("v"), name + ".v", nullptr)};
    }
  return ck;
}

void save(const std::string& path, const Checkpoint& ck) {
  const std::string text = serialize(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp);
    os << text;
    os.flush();
    if (!os) throw DataError("write failed for checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

void save_model(const std::string& path, const Model& model,
                const training::TrainConfig& cfg, const training::AdamState& adam) {
  Checkpoint ck;
  ck.config = cfg;
  ck.config.model = model.config();
  ck.params = model.params().clone();
  ck.adam = adam;
  save(path, ck);
}

Model load_model(const std::string& path) {
  Checkpoint ck = load(path);
  try {
    return Model(ck.config.model, std::move(ck.params));
  } catch (const ContractViolation& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace mocha::checkpoint
