#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipl {

class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ValueError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class IncompatibilityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Live/peak byte counters over all tensor payload allocations. The model's
// memory contract is asserted against these in tests.
namespace memtrack {

inline std::atomic<std::int64_t>& bytes_alive() {
  static std::atomic<std::int64_t> v{0};
  return v;
}
inline std::atomic<std::int64_t>& bytes_peak() {
  static std::atomic<std::int64_t> v{0};
  return v;
}

inline void on_alloc(std::int64_t n) {
  const std::int64_t alive = bytes_alive().fetch_add(n) + n;
  std::int64_t peak = bytes_peak().load();
  while (alive > peak && !bytes_peak().compare_exchange_weak(peak, alive)) {
  }
}
inline void on_free(std::int64_t n) { bytes_alive().fetch_sub(n); }
inline void reset_peak() { bytes_peak().store(bytes_alive().load()); }

}  // namespace memtrack

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) {}

  T* allocate(std::size_t n) {
    memtrack::on_alloc(static_cast<std::int64_t>(n * sizeof(T)));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) {
    std::allocator<T>{}.deallocate(p, n);
    memtrack::on_free(static_cast<std::int64_t>(n * sizeof(T)));
  }
  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const {
    return true;
  }
};

struct Shape3 {
  int c = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Shape3&) const = default;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(c) * w * h;
  }
  std::string str() const {
    return "(" + std::to_string(c) + "," + std::to_string(w) + "," +
           std::to_string(h) + ")";
  }
};

// Dense rank-3 feature map, layout (channel, width, height) with the height
// axis contiguous: index = (c*W + w)*H + h.
template <typename T>
class Tensor3T {
 public:
  using Buffer = std::vector<T, TrackingAllocator<T>>;

  Tensor3T() = default;
  Tensor3T(int c, int w, int h, T fill = T(0)) : shape_{c, w, h} {
    check_dims(shape_);
    data_.assign(static_cast<std::size_t>(shape_.numel()), fill);
  }
  Tensor3T(Shape3 s, T fill = T(0)) : Tensor3T(s.c, s.w, s.h, fill) {}

  static Tensor3T from(Shape3 s, std::vector<T> values) {
    check_dims(s);
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + s.str());
    }
    Tensor3T t;
    t.shape_ = s;
    t.data_.assign(values.begin(), values.end());
    return t;
  }

  const Shape3& shape() const { return shape_; }
  int c() const { return shape_.c; }
  int w() const { return shape_.w; }
  int h() const { return shape_.h; }
  std::int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& at(int c, int w, int h) { return data_[index(c, w, h)]; }
  T at(int c, int w, int h) const { return data_[index(c, w, h)]; }

  T* row(int c, int w) {
    return data_.data() + (static_cast<std::int64_t>(c) * shape_.w + w) * shape_.h;
  }
  const T* row(int c, int w) const {
    return data_.data() + (static_cast<std::int64_t>(c) * shape_.w + w) * shape_.h;
  }

  std::int64_t index(int c, int w, int h) const {
    return (static_cast<std::int64_t>(c) * shape_.w + w) * shape_.h + h;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void release() {
    shape_ = {};
    data_ = Buffer{};
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor3T<U> cast() const {
    Tensor3T<U> out(shape_.c, shape_.w, shape_.h);
    for (std::int64_t i = 0; i < numel(); ++i) {
      out.data()[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  bool operator==(const Tensor3T& other) const {
    return shape_ == other.shape_ &&
           std::equal(data_.begin(), data_.end(), other.data_.begin());
  }

 private:
  static void check_dims(const Shape3& s) {
    if (s.c < 1 || s.w < 1 || s.h < 1) {
      throw ShapeError("tensor dims must be >= 1, got " + s.str());
    }
  }

  Shape3 shape_{};
  Buffer data_;
};

using Tensor3 = Tensor3T<float>;

// 1x1 or 3x3 convolution parameters; 3x3 uses zero padding 1 so the spatial
// size is preserved. Weight layout [oc][ic][kh][kw].
template <typename T>
struct ConvParamsT {
  int out_ch = 0;
  int in_ch = 0;
  int k = 1;
  std::vector<T> weight;
  std::vector<T> bias;

  static ConvParamsT zeros(int out_ch, int in_ch, int k) {
    ConvParamsT p;
    p.out_ch = out_ch;
    p.in_ch = in_ch;
    p.k = k;
    p.weight.assign(static_cast<std::size_t>(out_ch) * in_ch * k * k, T(0));
    p.bias.assign(static_cast<std::size_t>(out_ch), T(0));
    p.validate();
    return p;
  }

  static ConvParamsT identity(int ch) {
    ConvParamsT p = zeros(ch, ch, 1);
    for (int c = 0; c < ch; ++c) p.weight[static_cast<std::size_t>(c) * ch + c] = T(1);
    return p;
  }

  void validate() const {
    if (k != 1 && k != 3) {
      throw ShapeError("conv kernel must be 1x1 or 3x3, got k=" + std::to_string(k));
    }
    if (out_ch < 1 || in_ch < 1) {
      throw ShapeError("conv channel counts must be >= 1");
    }
    if (weight.size() != static_cast<std::size_t>(out_ch) * in_ch * k * k) {
      throw ShapeError("conv weight length does not match (out,in,k,k)");
    }
    if (bias.size() != static_cast<std::size_t>(out_ch)) {
      throw ShapeError("conv bias length " + std::to_string(bias.size()) +
                       " does not match out channels " + std::to_string(out_ch));
    }
  }

  T wt(int oc, int ic, int kh, int kw) const {
    return weight[((static_cast<std::size_t>(oc) * in_ch + ic) * k + kh) * k + kw];
  }

  template <typename U>
  ConvParamsT<U> cast() const {
    ConvParamsT<U> out;
    out.out_ch = out_ch;
    out.in_ch = in_ch;
    out.k = k;
    out.weight.assign(weight.begin(), weight.end());
    out.bias.assign(bias.begin(), bias.end());
    return out;
  }
};

using ConvParams = ConvParamsT<float>;

}  // namespace ipl
