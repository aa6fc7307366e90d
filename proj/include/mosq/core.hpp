#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <openssl/evp.h>

namespace mosq {

enum class ErrorKind {
  DecodeError,
  AlreadyNormalized,
  OutOfBounds,
  ConfigError,
  BadFactor,
  MissingImage,
  ShapeMismatch,
  NonFinite,
  GraphNotRecorded,
  UnknownSpec,
  MissingFeature,
  ModelNotLoaded,
  EmptyDataset,
  DivergedLoss,
  BadClass,
  WrongSetSize,
  UnknownLabel,
  TooFewSpecimens,
  IoError,
  CorruptContainer,
  MalformedLine,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::AlreadyNormalized: return "AlreadyNormalized";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BadFactor: return "BadFactor";
    case ErrorKind::MissingImage: return "MissingImage";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::GraphNotRecorded: return "GraphNotRecorded";
    case ErrorKind::UnknownSpec: return "UnknownSpec";
    case ErrorKind::MissingFeature: return "MissingFeature";
    case ErrorKind::ModelNotLoaded: return "ModelNotLoaded";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::BadClass: return "BadClass";
    case ErrorKind::WrongSetSize: return "WrongSetSize";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::TooFewSpecimens: return "TooFewSpecimens";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::CorruptContainer: return "CorruptContainer";
    case ErrorKind::MalformedLine: return "MalformedLine";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

// ---------------------------------------------------------------------------
// Random numbers
//
// std::uniform_*_distribution is implementation-defined, so draws are built
// directly from the engine output to keep results identical across toolchains.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// xoshiro256** seeded through splitmix64.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }

  /// Independent stream derived from a parent seed and a label.
  static Rng substream(std::uint64_t seed, std::string_view label) {
    return Rng(splitmix64(seed ^ fnv1a(label)));
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  template <class Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      std::swap(c[i - 1], c[below(i)]);
    }
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> state_{};
};

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::IoError, "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

inline std::string sha256_hex(std::string_view s) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Taxonomy. Ordering follows the dataset table: genus-major, species-minor.

enum class Genus : int { Aedes = 0, Anopheles = 1, Culex = 2 };

enum class Species : int {
  Aegypti = 0,
  Infirmatus,
  Taeniorhynchus,
  Crucians,
  Quadrimaculatus,
  Stephensi,
  Coronator,
  Nigripalpus,
  Salinarius,
};

inline constexpr int kNumGenera = 3;
inline constexpr int kNumSpecies = 9;

inline constexpr std::array<std::string_view, kNumGenera> kGenusNames = {"Aedes", "Anopheles",
                                                                          "Culex"};
inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesNames = {
    "aegypti",   "infirmatus", "taeniorhynchus", "crucians",  "quadrimaculatus",
    "stephensi", "coronator",  "nigripalpus",    "salinarius"};

inline Genus genus_of(Species s) { return static_cast<Genus>(static_cast<int>(s) / 3); }

/// Index of the species within its genus (0..2).
inline int index_within_genus(Species s) { return static_cast<int>(s) % 3; }

inline Species species_in_genus(Genus g, int within) {
  return static_cast<Species>(static_cast<int>(g) * 3 + within);
}

inline std::string_view name(Genus g) { return kGenusNames[static_cast<int>(g)]; }
inline std::string_view name(Species s) { return kSpeciesNames[static_cast<int>(s)]; }

inline std::optional<Species> parse_species(std::string_view s) {
  for (int i = 0; i < kNumSpecies; ++i) {
    if (kSpeciesNames[i] == s) return static_cast<Species>(i);
  }
  return std::nullopt;
}

inline std::optional<Genus> parse_genus(std::string_view s) {
  for (int i = 0; i < kNumGenera; ++i) {
    if (kGenusNames[i] == s) return static_cast<Genus>(i);
  }
  return std::nullopt;
}

struct TaxonLabel {
  Genus genus = Genus::Aedes;
  Species species = Species::Aegypti;

  static TaxonLabel of(Species s) { return {genus_of(s), s}; }
  bool operator==(const TaxonLabel&) const = default;
};

/// Argmax with ties broken by the lowest index.
template <class Range>
int argmax(const Range& values) {
  int best = 0;
  int i = 0;
  for (auto it = std::begin(values); it != std::end(values); ++it, ++i) {
    if (*it > *(std::begin(values) + best)) best = i;
  }
  return best;
}

}  // namespace mosq
