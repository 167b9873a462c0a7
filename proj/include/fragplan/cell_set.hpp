#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <vector>

namespace fragplan {

/// Fixed-universe set of cell indices backed by 64-bit words.
class CellSet {
public:
    CellSet() = default;
    explicit CellSet(int universe) : universe_(universe), words_(static_cast<std::size_t>((universe + 63) / 64), 0) {}

    int universe() const { return universe_; }

    bool contains(int i) const { return (words_[word(i)] >> bit(i)) & 1U; }
    void insert(int i) { words_[word(i)] |= std::uint64_t{1} << bit(i); }
    void erase(int i) { words_[word(i)] &= ~(std::uint64_t{1} << bit(i)); }

    bool empty() const {
        for (auto w : words_)
            if (w) return false;
        return true;
    }

    int size() const {
        int n = 0;
        for (auto w : words_) n += std::popcount(w);
        return n;
    }

    bool intersects(const CellSet& other) const {
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (words_[i] & other.words_[i]) return true;
        return false;
    }

    int intersection_size(const CellSet& other) const {
        int n = 0;
        for (std::size_t i = 0; i < words_.size(); ++i) n += std::popcount(words_[i] & other.words_[i]);
        return n;
    }

    bool is_subset_of(const CellSet& other) const {
        for (std::size_t i = 0; i < words_.size(); ++i)
            if (words_[i] & ~other.words_[i]) return false;
        return true;
    }

    CellSet& operator|=(const CellSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
        return *this;
    }
    CellSet& operator&=(const CellSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
        return *this;
    }
    CellSet& operator-=(const CellSet& o) {
        for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
        return *this;
    }

    friend CellSet operator|(CellSet a, const CellSet& b) { return a |= b; }
    friend CellSet operator&(CellSet a, const CellSet& b) { return a &= b; }
    friend CellSet operator-(CellSet a, const CellSet& b) { return a -= b; }
    friend bool operator==(const CellSet&, const CellSet&) = default;
    friend auto operator<=>(const CellSet&, const CellSet&) = default;

    template <typename F>
    void for_each(F&& f) const {
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t bits = words_[w];
            while (bits) {
                const int b = std::countr_zero(bits);
                f(static_cast<int>(w * 64) + b);
                bits &= bits - 1;
            }
        }
    }

    std::vector<int> to_vector() const {
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(size()));
        for_each([&](int i) { out.push_back(i); });
        return out;
    }

    /// 128-bit fingerprint (two independent 64-bit mixes).
    std::pair<std::uint64_t, std::uint64_t> fingerprint() const {
        std::uint64_t a = 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(universe_);
        std::uint64_t b = 0xc2b2ae3d27d4eb4fULL;
        for (auto w : words_) {
            a = mix(a ^ w);
            b = mix(b + w * 0xff51afd7ed558ccdULL);
        }
        return {a, b};
    }

    const std::vector<std::uint64_t>& words() const { return words_; }

private:
    static std::size_t word(int i) { return static_cast<std::size_t>(i) >> 6; }
    static unsigned bit(int i) { return static_cast<unsigned>(i) & 63U; }
    static std::uint64_t mix(std::uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    int universe_ = 0;
    std::vector<std::uint64_t> words_;
};

struct CellSetHash {
    std::size_t operator()(const CellSet& s) const { return static_cast<std::size_t>(s.fingerprint().first); }
};

}  // namespace fragplan
