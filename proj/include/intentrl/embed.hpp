#ifndef INTENTRL_EMBED_HPP_
#define INTENTRL_EMBED_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "intentrl/traj.hpp"

namespace intentrl {

enum class EmbedderKind { kHashFeaturizer, kRemoteService };

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::kHashFeaturizer;
  int dim = 64;
  bool normalize = true;
  int ngram_min = 2;
  int ngram_max = 4;
  uint64_t seed = 0;
  // Remote service settings.
  std::string endpoint;       // e.g. http://127.0.0.1:8089/v1/embeddings
  std::string api_key_env;    // name of env var holding the key, may be empty
  std::string model = "hash-v1";
  int max_retries = 3;
  int backoff_ms = 250;

  // Content fingerprint; part of cache keys so stale entries never match.
  std::string fingerprint() const;
  std::vector<std::string> validate() const;
};

struct EmbeddingMatrix {
  int64_t n = 0;
  int64_t d = 0;
  std::vector<float> data;                       // row-major, n*d
  std::vector<uint32_t> uids;                    // row -> uid
  std::unordered_map<uint32_t, int64_t> uid_index;  // uid -> row

  std::span<const float> row(int64_t i) const {
    return std::span<const float>(data.data() + i * d, static_cast<size_t>(d));
  }
  std::span<const float> row_for_uid(uint32_t uid) const {
    return row(uid_index.at(uid));
  }
  void rebuild_index();
};

class RemoteEmbedError : public std::runtime_error {
 public:
  explicit RemoteEmbedError(const std::string& what) : std::runtime_error(what) {}
};

// Embeds each text to a d-vector. Hash featurizer is deterministic given
// (cfg, seed); the remote client preserves input order and retries
// transient failures with exponential backoff.
std::vector<std::vector<float>> embed_texts(const EmbedderConfig& cfg,
                                            const std::vector<std::string>& texts);

// Embeds every distinct corpus utterance exactly once, consulting a
// persistent cache keyed by (text, config fingerprint). A corrupt cache is
// detected by checksum and rebuilt.
EmbeddingMatrix embed_corpus(const EmbedderConfig& cfg, const TrajectorySet& set,
                             const std::string& cache_path);

// Matrix persistence: raw little-endian float32 data plus a sidecar
// metadata record {n, d, uids, checksum} at path + ".meta.json".
void save_matrix(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix load_matrix(const std::string& path);

}  // namespace intentrl

#endif  // INTENTRL_EMBED_HPP_
