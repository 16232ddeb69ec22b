#include "intentrl/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace intentrl {

using nlohmann::json;

std::string EmbedderConfig::fingerprint() const {
  std::ostringstream ss;
  ss << (kind == EmbedderKind::kHashFeaturizer ? "hash" : "remote") << "|d=" << dim
     << "|norm=" << (normalize ? 1 : 0) << "|ng=" << ngram_min << ".." << ngram_max
     << "|seed=" << seed << "|model=" << model;
  return hex64(fnv1a64(ss.str()));
}

std::vector<std::string> EmbedderConfig::validate() const {
  std::vector<std::string> v;
  if (dim < 2) v.push_back("embedder dim must be >= 2");
  if (ngram_min > ngram_max) v.push_back("ngram range lower must be <= upper");
  if (ngram_min < 1) v.push_back("ngram range lower must be >= 1");
  if (kind == EmbedderKind::kRemoteService && endpoint.empty()) {
    v.push_back("remote embedder requires an endpoint");
  }
  return v;
}

void EmbeddingMatrix::rebuild_index() {
  uid_index.clear();
  for (int64_t i = 0; i < n; ++i) uid_index[uids[i]] = i;
}

namespace {

void l2_normalize(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  if (s <= 0.0) return;  // zero vector stays zero
  double inv = 1.0 / std::sqrt(s);
  for (float& x : v) x = static_cast<float>(x * inv);
}

// Signed character n-gram hashing into d buckets.
std::vector<float> hash_embed(const EmbedderConfig& cfg, const std::string& text) {
  std::vector<float> v(static_cast<size_t>(cfg.dim), 0.0f);
  const size_t len = text.size();
  int lo = cfg.ngram_min, hi = cfg.ngram_max;
  if (len > 0 && static_cast<size_t>(lo) > len) lo = static_cast<int>(len);
  for (int n = lo; n <= hi; ++n) {
    if (n <= 0 || static_cast<size_t>(n) > len) break;
    for (size_t i = 0; i + n <= len; ++i) {
      uint64_t h = fnv1a64(std::string_view(text.data() + i, n),
                           14695981039346656037ull ^ cfg.seed);
      size_t bucket = static_cast<size_t>(h % static_cast<uint64_t>(cfg.dim));
      float sign = ((h >> 63) & 1) ? -1.0f : 1.0f;
      v[bucket] += sign;
    }
  }
  if (cfg.normalize) l2_normalize(v);
  return v;
}

struct EndpointParts {
  std::string base;  // scheme://host:port
  std::string path;  // /path
};

EndpointParts split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw RemoteEmbedError("endpoint must include a scheme: " + endpoint);
  }
  auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

std::vector<std::vector<float>> remote_embed_batch(
    const EmbedderConfig& cfg, const std::vector<std::string>& texts) {
  EndpointParts ep = split_endpoint(cfg.endpoint);
  json body;
  body["model"] = cfg.model;
  body["input"] = texts;
  std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1)));
    }
    httplib::Client client(ep.base);
    client.set_read_timeout(30, 0);
    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
      const char* key = std::getenv(cfg.api_key_env.c_str());
      if (key != nullptr) headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::exception& e) {
      last_error = std::string("bad response body: ") + e.what();
      continue;
    }
    if (!parsed.contains("data") || !parsed["data"].is_array() ||
        parsed["data"].size() != texts.size()) {
      throw RemoteEmbedError("response data count does not match input count");
    }
    // The service may return entries in any order; sort by index.
    std::vector<std::vector<float>> out(texts.size());
    std::vector<bool> filled(texts.size(), false);
    for (const auto& item : parsed["data"]) {
      size_t idx = item.at("index").get<size_t>();
      if (idx >= texts.size() || filled[idx]) {
        throw RemoteEmbedError("response contains bad or duplicate index");
      }
      auto vec = item.at("embedding").get<std::vector<float>>();
      if (static_cast<int>(vec.size()) != cfg.dim) {
        throw RemoteEmbedError("dimension mismatch: expected " +
                               std::to_string(cfg.dim) + ", got " +
                               std::to_string(vec.size()));
      }
      out[idx] = std::move(vec);
      filled[idx] = true;
    }
    if (cfg.normalize) {
      for (auto& v : out) l2_normalize(v);
    }
    return out;
  }
  throw RemoteEmbedError("remote embedding failed after " +
                         std::to_string(cfg.max_retries) + " attempts: " +
                         last_error);
}

constexpr size_t kRemoteBatch = 64;

}  // namespace

std::vector<std::vector<float>> embed_texts(const EmbedderConfig& cfg,
                                            const std::vector<std::string>& texts) {
  auto problems = cfg.validate();
  if (!problems.empty()) throw ValidationError(problems.front());
  if (texts.empty()) throw ValidationError("embed_texts: empty input");

  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  if (cfg.kind == EmbedderKind::kHashFeaturizer) {
    for (const auto& t : texts) out.push_back(hash_embed(cfg, t));
    return out;
  }
  for (size_t start = 0; start < texts.size(); start += kRemoteBatch) {
    size_t end = std::min(texts.size(), start + kRemoteBatch);
    std::vector<std::string> batch(texts.begin() + start, texts.begin() + end);
    auto vecs = remote_embed_batch(cfg, batch);
    for (auto& v : vecs) out.push_back(std::move(v));
  }
  return out;
}

namespace {

constexpr char kCacheMagic[8] = {'I', 'R', 'L', 'E', 'M', 'B', '1', '\n'};

struct CacheRecord {
  uint64_t key;
  std::vector<float> vec;
};

uint64_t record_checksum(uint64_t key, const std::vector<float>& vec) {
  uint64_t h = fnv1a64_bytes(&key, sizeof(key));
  return fnv1a64_bytes(vec.data(), vec.size() * sizeof(float), h);
}

std::unordered_map<uint64_t, std::vector<float>> load_cache(
    const std::string& path, int dim) {
  std::unordered_map<uint64_t, std::vector<float>> cache;
  std::ifstream in(path, std::ios::binary);
  if (!in) return cache;
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCacheMagic, 8) != 0) return {};
  while (true) {
    uint64_t key = 0;
    uint32_t d = 0;
    if (!in.read(reinterpret_cast<char*>(&key), sizeof(key))) break;
    if (!in.read(reinterpret_cast<char*>(&d), sizeof(d))) return {};
    if (d == 0 || d > (1u << 20)) return {};
    std::vector<float> vec(d);
    if (!in.read(reinterpret_cast<char*>(vec.data()), d * sizeof(float))) return {};
    uint64_t sum = 0;
    if (!in.read(reinterpret_cast<char*>(&sum), sizeof(sum))) return {};
    if (sum != record_checksum(key, vec)) return {};  // corrupt: rebuild all
    if (static_cast<int>(d) == dim) cache[key] = std::move(vec);
  }
  return cache;
}

void save_cache(const std::string& path,
                const std::unordered_map<uint64_t, std::vector<float>>& cache) {
  std::vector<uint64_t> keys;
  keys.reserve(cache.size());
  for (const auto& [k, _] : cache) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  std::ostringstream out;
  out.write(kCacheMagic, 8);
  for (uint64_t k : keys) {
    const auto& vec = cache.at(k);
    uint32_t d = static_cast<uint32_t>(vec.size());
    uint64_t sum = record_checksum(k, vec);
    out.write(reinterpret_cast<const char*>(&k), sizeof(k));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(vec.data()), d * sizeof(float));
    out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  }
  write_file(path, out.str());
}

}  // namespace

EmbeddingMatrix embed_corpus(const EmbedderConfig& cfg, const TrajectorySet& set,
                             const std::string& cache_path) {
  auto problems = cfg.validate();
  if (!problems.empty()) throw ValidationError(problems.front());

  const std::string fp = cfg.fingerprint();
  auto cache_key = [&](const std::string& text) {
    return fnv1a64(text + "\x1f" + fp);
  };

  auto cache = cache_path.empty()
                   ? std::unordered_map<uint64_t, std::vector<float>>{}
                   : load_cache(cache_path, cfg.dim);

  // Distinct texts needing embedding (corpus rows may repeat a text under
  // two speakers; each text is embedded once).
  std::vector<std::string> missing;
  std::unordered_map<uint64_t, bool> queued;
  for (const auto& u : set.corpus) {
    uint64_t key = cache_key(u.text);
    if (cache.find(key) == cache.end() && !queued[key]) {
      queued[key] = true;
      missing.push_back(u.text);
    }
  }
  if (!missing.empty()) {
    auto vecs = embed_texts(cfg, missing);
    for (size_t i = 0; i < missing.size(); ++i) {
      cache[cache_key(missing[i])] = std::move(vecs[i]);
    }
    if (!cache_path.empty()) save_cache(cache_path, cache);
  }

  EmbeddingMatrix m;
  m.n = static_cast<int64_t>(set.corpus.size());
  m.d = cfg.dim;
  m.data.resize(static_cast<size_t>(m.n) * m.d);
  m.uids.resize(static_cast<size_t>(m.n));
  for (int64_t i = 0; i < m.n; ++i) {
    const Utterance& u = set.corpus[static_cast<size_t>(i)];
    const auto& vec = cache.at(cache_key(u.text));
    std::copy(vec.begin(), vec.end(), m.data.begin() + i * m.d);
    m.uids[static_cast<size_t>(i)] = u.uid;
  }
  m.rebuild_index();
  for (float x : m.data) {
    if (!std::isfinite(x)) throw ValidationError("embedding contains non-finite value");
  }
  return m;
}

void save_matrix(const EmbeddingMatrix& m, const std::string& path) {
  std::string bytes(reinterpret_cast<const char*>(m.data.data()),
                    m.data.size() * sizeof(float));
  write_file(path, bytes);
  json meta;
  meta["n"] = m.n;
  meta["d"] = m.d;
  meta["uids"] = m.uids;
  meta["checksum"] = hex64(fnv1a64(bytes));
  write_file(path + ".meta.json", meta.dump(2) + "\n");
}

EmbeddingMatrix load_matrix(const std::string& path) {
  json meta = json::parse(read_file(path + ".meta.json"));
  EmbeddingMatrix m;
  m.n = meta.at("n").get<int64_t>();
  m.d = meta.at("d").get<int64_t>();
  m.uids = meta.at("uids").get<std::vector<uint32_t>>();
  std::string bytes = read_file(path);
  if (bytes.size() != static_cast<size_t>(m.n) * m.d * sizeof(float)) {
    throw ValidationError("matrix data length mismatch: expected " +
                          std::to_string(m.n * m.d * sizeof(float)) + " bytes, got " +
                          std::to_string(bytes.size()));
  }
  if (meta.at("checksum").get<std::string>() != hex64(fnv1a64(bytes))) {
    throw ValidationError("matrix checksum failure: " + path);
  }
  if (static_cast<int64_t>(m.uids.size()) != m.n) {
    throw ValidationError("matrix uid list length mismatch");
  }
  m.data.resize(static_cast<size_t>(m.n) * m.d);
  std::memcpy(m.data.data(), bytes.data(), bytes.size());
  m.rebuild_index();
  return m;
}

}  // namespace intentrl
