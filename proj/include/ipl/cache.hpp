#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ipl/quantize.hpp"
#include "ipl/tensor.hpp"

namespace ipl {

namespace detail {

inline std::uint64_t rotl64(std::uint64_t x, int r) {
  return (x << r) | (x >> (64 - r));
}

inline std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

// MurmurHash3 x64 128-bit
inline void murmur3_x64_128(const void* key, std::size_t len, std::uint64_t seed,
                            std::uint64_t out[2]) {
  const auto* data = static_cast<const std::uint8_t*>(key);
  const std::size_t nblocks = len / 16;
  std::uint64_t h1 = seed, h2 = seed;
  const std::uint64_t c1 = 0x87c37b91114253d5ULL;
  const std::uint64_t c2 = 0x4cf5ad432745937fULL;

  for (std::size_t i = 0; i < nblocks; ++i) {
    std::uint64_t k1, k2;
    std::memcpy(&k1, data + i * 16, 8);
    std::memcpy(&k2, data + i * 16 + 8, 8);
    k1 *= c1;
    k1 = rotl64(k1, 31);
    k1 *= c2;
    h1 ^= k1;
    h1 = rotl64(h1, 27);
    h1 += h2;
    h1 = h1 * 5 + 0x52dce729;
    k2 *= c2;
    k2 = rotl64(k2, 33);
    k2 *= c1;
    h2 ^= k2;
    h2 = rotl64(h2, 31);
    h2 += h1;
    h2 = h2 * 5 + 0x38495ab5;
  }

  const std::uint8_t* tail = data + nblocks * 16;
  std::uint64_t k1 = 0, k2 = 0;
  switch (len & 15) {
    case 15: k2 ^= static_cast<std::uint64_t>(tail[14]) << 48; [[fallthrough]];
    case 14: k2 ^= static_cast<std::uint64_t>(tail[13]) << 40; [[fallthrough]];
    case 13: k2 ^= static_cast<std::uint64_t>(tail[12]) << 32; [[fallthrough]];
    case 12: k2 ^= static_cast<std::uint64_t>(tail[11]) << 24; [[fallthrough]];
    case 11: k2 ^= static_cast<std::uint64_t>(tail[10]) << 16; [[fallthrough]];
    case 10: k2 ^= static_cast<std::uint64_t>(tail[9]) << 8; [[fallthrough]];
    case 9:
      k2 ^= static_cast<std::uint64_t>(tail[8]);
      k2 *= c2;
      k2 = rotl64(k2, 33);
      k2 *= c1;
      h2 ^= k2;
      [[fallthrough]];
    case 8: k1 ^= static_cast<std::uint64_t>(tail[7]) << 56; [[fallthrough]];
    case 7: k1 ^= static_cast<std::uint64_t>(tail[6]) << 48; [[fallthrough]];
    case 6: k1 ^= static_cast<std::uint64_t>(tail[5]) << 40; [[fallthrough]];
    case 5: k1 ^= static_cast<std::uint64_t>(tail[4]) << 32; [[fallthrough]];
    case 4: k1 ^= static_cast<std::uint64_t>(tail[3]) << 24; [[fallthrough]];
    case 3: k1 ^= static_cast<std::uint64_t>(tail[2]) << 16; [[fallthrough]];
    case 2: k1 ^= static_cast<std::uint64_t>(tail[1]) << 8; [[fallthrough]];
    case 1:
      k1 ^= static_cast<std::uint64_t>(tail[0]);
      k1 *= c1;
      k1 = rotl64(k1, 31);
      k1 *= c2;
      h1 ^= k1;
      break;
    default: break;
  }

  h1 ^= static_cast<std::uint64_t>(len);
  h2 ^= static_cast<std::uint64_t>(len);
  h1 += h2;
  h2 += h1;
  h1 = fmix64(h1);
  h2 = fmix64(h2);
  h1 += h2;
  h2 += h1;
  out[0] = h1;
  out[1] = h2;
}

}  // namespace detail

enum class DimTag : std::uint8_t { kChannel = 0, kWidth = 1, kHeight = 2 };

inline const char* dim_tag_name(DimTag t) {
  switch (t) {
    case DimTag::kChannel: return "channel";
    case DimTag::kWidth: return "width";
    case DimTag::kHeight: return "height";
  }
  return "?";
}

// Content fingerprint of a block: 128-bit hash over (dim tag, block shape,
// the block's own 8-bit quantized code bytes). Blocks whose codes agree
// byte-for-byte under their own fitted params share a key.
struct BlockKey {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  DimTag tag = DimTag::kChannel;
  Shape3 shape{};

  bool operator==(const BlockKey&) const = default;
};

struct BlockKeyHash {
  std::size_t operator()(const BlockKey& k) const {
    return static_cast<std::size_t>(k.lo);
  }
};

inline BlockKey key_of(const Tensor3& block, DimTag tag, int q_min = 0,
                       int q_max = 255) {
  const QuantizedTensor q = quantize(block, q_min, q_max);
  std::vector<std::uint8_t> buf;
  buf.reserve(13 + q.codes.size());
  buf.push_back(static_cast<std::uint8_t>(tag));
  detail::put_u32(buf, static_cast<std::uint32_t>(block.c()));
  detail::put_u32(buf, static_cast<std::uint32_t>(block.w()));
  detail::put_u32(buf, static_cast<std::uint32_t>(block.h()));
  buf.insert(buf.end(), q.codes.begin(), q.codes.end());
  BlockKey key;
  std::uint64_t h[2];
  detail::murmur3_x64_128(buf.data(), buf.size(), 0x49504c43ULL, h);
  key.lo = h[0];
  key.hi = h[1];
  key.tag = tag;
  key.shape = block.shape();
  return key;
}

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  std::uint64_t rejected = 0;
  std::uint64_t bytes_used = 0;
  std::uint64_t bytes_capacity = 0;
  std::uint64_t lfe_evals_saved = 0;

  std::string line() const {
    return "hits=" + std::to_string(hits) + " misses=" + std::to_string(misses) +
           " evictions=" + std::to_string(evictions) +
           " bytes_used=" + std::to_string(bytes_used) +
           " lfe_evals_saved=" + std::to_string(lfe_evals_saved);
  }
};

// Byte-budgeted LRU store of quantization-compressed block features.
// All operations are serialized on one mutex; memoized_lfe computes misses
// outside the lock, so duplicate concurrent computes are possible but only
// one entry survives.
class AttentionCache {
 public:
  // 16 key bytes + serialized quant header per resident entry
  static constexpr std::uint64_t kEntryHeaderBytes = 16 + kQuantHeaderBytes;

  explicit AttentionCache(std::uint64_t capacity_bytes, int q_min = 0,
                          int q_max = 255, bool raw_mode = false)
      : capacity_(capacity_bytes), q_min_(q_min), q_max_(q_max), raw_mode_(raw_mode) {
    stats_.bytes_capacity = capacity_;
  }

  bool enabled() const { return capacity_ > 0; }
  int q_min() const { return q_min_; }
  int q_max() const { return q_max_; }

  std::optional<Tensor3> lookup(const BlockKey& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) {
      ++stats_.misses;
      return std::nullopt;
    }
    ++stats_.hits;
    touch(it->second);
    return materialize(it->second);
  }

  void insert(const BlockKey& key, const Tensor3& value) {
    Entry entry = make_entry(key, value);
    std::lock_guard<std::mutex> lock(mu_);
    insert_locked(key, std::move(entry));
  }

  // Eq. (9): decode a hit without calling lfe; on miss call lfe, store the
  // encoded output, and return the exact (unquantized) value.
  Tensor3 memoized_lfe(const Tensor3& block, DimTag tag,
                       const std::function<Tensor3(const Tensor3&)>& lfe) {
    if (!enabled()) return lfe(block);
    const BlockKey key = key_of(block, tag, q_min_, q_max_);
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = map_.find(key);
      if (it != map_.end()) {
        ++stats_.hits;
        ++stats_.lfe_evals_saved;
        touch(it->second);
        return materialize(it->second);
      }
      ++stats_.misses;
    }
    Tensor3 out = lfe(block);
    Entry entry = make_entry(key, out);
    {
      std::lock_guard<std::mutex> lock(mu_);
      insert_locked(key, std::move(entry));
    }
    return out;
  }

  CacheStats stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    return stats_;
  }

  std::uint64_t peak_bytes() const {
    std::lock_guard<std::mutex> lock(mu_);
    return peak_bytes_;
  }

  std::size_t resident_entries() const {
    std::lock_guard<std::mutex> lock(mu_);
    return map_.size();
  }

  std::vector<BlockKey> resident_keys() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<BlockKey> keys;
    keys.reserve(lru_.size());
    for (const BlockKey& k : lru_) keys.push_back(k);
    return keys;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    map_.clear();
    lru_.clear();
    stats_.bytes_used = 0;
  }

  void reset_stats() {
    std::lock_guard<std::mutex> lock(mu_);
    const std::uint64_t used = stats_.bytes_used;
    stats_ = CacheStats{};
    stats_.bytes_used = used;
    stats_.bytes_capacity = capacity_;
  }

 private:
  struct Entry {
    QuantizedTensor payload;          // quantized mode
    std::vector<float> raw;           // raw test mode
    Shape3 shape{};
    std::uint64_t size = 0;
    std::uint64_t last_touch = 0;
    std::list<BlockKey>::iterator pos;
  };

  Entry make_entry(const BlockKey& key, const Tensor3& value) const {
    Entry e;
    e.shape = value.shape();
    if (raw_mode_) {
      e.raw.assign(value.data(), value.data() + value.numel());
      e.size = kEntryHeaderBytes + e.raw.size() * sizeof(float);
    } else {
      e.payload = quantize(value, q_min_, q_max_);
      e.size = kEntryHeaderBytes + e.payload.payload_bytes();
    }
    (void)key;
    return e;
  }

  Tensor3 materialize(const Entry& e) const {
    if (raw_mode_) {
      Tensor3 out(e.shape);
      std::copy(e.raw.begin(), e.raw.end(), out.data());
      return out;
    }
    return decode(e.payload);
  }

  void touch(Entry& e) {
    e.last_touch = ++op_counter_;
    lru_.splice(lru_.begin(), lru_, e.pos);
  }

  void insert_locked(const BlockKey& key, Entry&& entry) {
    if (entry.size > capacity_) {
      ++stats_.rejected;
      return;
    }
    auto it = map_.find(key);
    if (it != map_.end()) {
      stats_.bytes_used -= it->second.size;
      lru_.erase(it->second.pos);
      map_.erase(it);
    }
    while (stats_.bytes_used + entry.size > capacity_) {
      const BlockKey& victim = lru_.back();
      auto vit = map_.find(victim);
      stats_.bytes_used -= vit->second.size;
      map_.erase(vit);
      lru_.pop_back();
      ++stats_.evictions;
    }
    lru_.push_front(key);
    entry.pos = lru_.begin();
    entry.last_touch = ++op_counter_;
    stats_.bytes_used += entry.size;
    if (stats_.bytes_used > peak_bytes_) peak_bytes_ = stats_.bytes_used;
    stats_.bytes_capacity = capacity_;
    map_.emplace(key, std::move(entry));
  }

  mutable std::mutex mu_;
  std::uint64_t capacity_;
  int q_min_;
  int q_max_;
  bool raw_mode_;
  std::uint64_t op_counter_ = 0;
  std::uint64_t peak_bytes_ = 0;
  CacheStats stats_{};
  std::list<BlockKey> lru_;
  std::unordered_map<BlockKey, Entry, BlockKeyHash> map_;
};

}  // namespace ipl
