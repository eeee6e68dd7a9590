#include "nutri/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <tuple>

#include "nutri/errors.hpp"

namespace nutri {

namespace {

// One planned transform with its own aligned buffer. Plans are made with
// FFTW_ESTIMATE so results do not depend on timing measurements.
class Plan {
 public:
  Plan(int rows, int cols, bool inverse) : n_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    buf_ = fftw_alloc_complex(n_);
    if (!buf_) throw std::bad_alloc();
    const int sign = inverse ? FFTW_BACKWARD : FFTW_FORWARD;
    plan_ = rows == 1 ? fftw_plan_dft_1d(cols, buf_, buf_, sign, FFTW_ESTIMATE)
                      : fftw_plan_dft_2d(rows, cols, buf_, buf_, sign, FFTW_ESTIMATE);
    if (!plan_) {
      fftw_free(buf_);
      throw std::runtime_error("fftw: planning failed");
    }
  }
  ~Plan() {
    fftw_destroy_plan(plan_);
    fftw_free(buf_);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;

  fftw_complex* buffer() { return buf_; }
  std::size_t size() const { return n_; }
  void run() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  fftw_complex* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
};

Plan& plan_for(int rows, int cols, bool inverse) {
  thread_local std::map<std::tuple<int, int, bool>, std::unique_ptr<Plan>> cache;
  auto& slot = cache[{rows, cols, inverse}];
  if (!slot) slot = std::make_unique<Plan>(rows, cols, inverse);
  return *slot;
}

ComplexTensor transform2(const ComplexTensor& x, bool inverse) {
  if (x.shape.size() < 2) throw DimensionError("fft2: need rank >= 2, got " + shape_str(x.shape));
  const auto h = x.shape[x.shape.size() - 2], w = x.shape.back();
  if (h < 1 || w < 1) throw DimensionError("fft2: empty spatial extent " + shape_str(x.shape));
  auto& plan = plan_for(static_cast<int>(h), static_cast<int>(w), inverse);
  const std::size_t plane = plan.size();
  const std::size_t planes = x.numel() / plane;
  const double norm = inverse ? 1.0 / static_cast<double>(plane) : 1.0;

  ComplexTensor out{x.shape, std::vector<double>(x.numel()), std::vector<double>(x.numel())};
  auto* buf = plan.buffer();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t off = p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      buf[i][0] = x.re[off + i];
      buf[i][1] = x.im[off + i];
    }
    plan.run();
    for (std::size_t i = 0; i < plane; ++i) {
      out.re[off + i] = buf[i][0] * norm;
      out.im[off + i] = buf[i][1] * norm;
    }
  }
  return out;
}

}  // namespace

ComplexTensor ComplexTensor::from_real(const Tensor& x) {
  const auto d = x.data();
  return {x.shape(), std::vector<double>(d.begin(), d.end()), std::vector<double>(x.numel(), 0.0)};
}

void fft1d(std::span<std::complex<double>> data, bool inverse) {
  if (data.empty()) return;
  auto& plan = plan_for(1, static_cast<int>(data.size()), inverse);
  static_assert(sizeof(fftw_complex) == sizeof(std::complex<double>));
  std::memcpy(plan.buffer(), data.data(), data.size_bytes());
  plan.run();
  std::memcpy(data.data(), plan.buffer(), data.size_bytes());
}

ComplexTensor fft2(const ComplexTensor& x) { return transform2(x, false); }
ComplexTensor fft2(const Tensor& x) { return transform2(ComplexTensor::from_real(x), false); }
ComplexTensor ifft2(const ComplexTensor& x) { return transform2(x, true); }

}  // namespace nutri
