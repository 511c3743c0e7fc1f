#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace histofuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. The CLI maps each type to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingPrerequisite : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

using Warnings = std::vector<std::string>;

// Histological subclasses in canonical order: malignant first, then benign.
enum class Subclass : std::uint8_t { DC, LC, MC, PC, A, F, TA, PT };

inline constexpr std::size_t kNumSubclasses = 8;

inline constexpr std::array<Subclass, kNumSubclasses> kAllSubclasses = {
    Subclass::DC, Subclass::LC, Subclass::MC, Subclass::PC,
    Subclass::A,  Subclass::F,  Subclass::TA, Subclass::PT};

enum class BinaryClass : std::uint8_t { Benign, Malignant };

inline constexpr std::array<int, 4> kMagnifications = {40, 100, 200, 400};

inline std::string_view to_string(Subclass s) {
    switch (s) {
    case Subclass::DC: return "DC";
    case Subclass::LC: return "LC";
    case Subclass::MC: return "MC";
    case Subclass::PC: return "PC";
    case Subclass::A: return "A";
    case Subclass::F: return "F";
    case Subclass::TA: return "TA";
    case Subclass::PT: return "PT";
    }
    return "?";
}

inline std::string_view to_string(BinaryClass b) {
    return b == BinaryClass::Malignant ? "malignant" : "benign";
}

inline std::optional<Subclass> parse_subclass(std::string_view token) {
    for (auto s : kAllSubclasses) {
        if (to_string(s) == token) return s;
    }
    return std::nullopt;
}

inline constexpr BinaryClass binary_class(Subclass s) {
    switch (s) {
    case Subclass::DC:
    case Subclass::LC:
    case Subclass::MC:
    case Subclass::PC: return BinaryClass::Malignant;
    default: return BinaryClass::Benign;
    }
}

inline constexpr std::size_t index_of(Subclass s) { return static_cast<std::size_t>(s); }

inline bool is_magnification(int m) {
    for (int v : kMagnifications) {
        if (v == m) return true;
    }
    return false;
}

// Portable 64-bit PRNG. std::uniform_*_distribution is implementation-defined,
// so every sampling routine here derives values from raw 64-bit draws.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

// xoshiro256** seeded through SplitMix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& s : s_) s = sm.next();
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller; one value per call keeps the stream position simple.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> s_{};
};

// Derives an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    SplitMix64 sm(base ^ h);
    return sm.next();
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Makes the first entry whose magnitude exceeds a small fraction of the norm
// positive. Returns true when the vector was flipped.
template <typename Derived>
bool fix_sign(const Eigen::MatrixBase<Derived>& v_) {
    auto& v = const_cast<Eigen::MatrixBase<Derived>&>(v_);
    const double norm = v.norm();
    if (norm == 0.0) return false;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-10 * norm) {
            if (v(i) < 0) {
                v = -v;
                return true;
            }
            return false;
        }
    }
    return false;
}

}  // namespace histofuse
