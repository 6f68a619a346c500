// Timing comparison of the tiled OpenMP rasterizer against the serial
// reference compositor, plus the backward pass.

#include <chrono>
#include <iostream>

#include <omp.h>

#include "dgs/rasterizer.hpp"

using namespace dgs;

namespace {

GaussianSet<float> random_scene(Rng& rng, int n) {
  GaussianSet<float> set;
  set.sh_degree = 1;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive<float> p;
    p.center = Vec3<float>(uniform<float>(rng, -1.f, 1.f), uniform<float>(rng, -1.f, 1.f),
                           uniform<float>(rng, 1.5f, 5.f));
    for (int k = 0; k < 3; ++k) p.scale_raw[k] = raw_from_scale(uniform<float>(rng, 0.02f, 0.2f));
    Vec4<float> q;
    for (int k = 0; k < 4; ++k) q[k] = normal<float>(rng);
    p.rotation = q / q.norm();
    p.opacity_raw = uniform<float>(rng, -1.f, 3.f);
    p.features = VecX<float>::Zero(set.sh_dim());
    for (int k = 0; k < set.sh_dim(); ++k) p.features[k] = uniform<float>(rng, -0.5f, 1.5f);
    set.push_back(p);
  }
  return set;
}

template <class F>
double time_ms(F&& fn, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  const int n = argc > 1 ? std::atoi(argv[1]) : 2000;
  const int size = argc > 2 ? std::atoi(argv[2]) : 128;
  const int reps = argc > 3 ? std::atoi(argv[3]) : 5;

  Rng rng(7);
  const GaussianSet<float> set = random_scene(rng, n);
  Camera<float> cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = float(size) * 1.1f;
  cam.cx = cam.cy = float(size) / 2.f;
  RenderOptions<float> opts;
  opts.background = Vec3<float>(0.1f, 0.2f, 0.3f);
  opts.early_termination = false;

  std::cout << "primitives=" << n << " image=" << size << "x" << size
            << " threads=" << omp_get_max_threads() << " reps=" << reps << "\n";

  const auto fwd = render_forward(set, cam, opts);
  const double t_tiled = time_ms([&] { render_forward(set, cam, opts); }, reps);
  const double t_naive = time_ms([&] { render_naive(set, cam, opts); }, reps);

  Image<float> dc(size, size, 3, 1.0f);
  Image<float> da(size, size, 1, 0.5f);
  const double t_bwd = time_ms([&] { render_backward(set, fwd, dc, da); }, reps);

  const auto naive = render_naive(set, cam, opts);
  float max_diff = 0.f;
  for (size_t i = 0; i < fwd.color.data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(fwd.color.data[i] - naive.color.data[i]));

  std::cout << "tiled forward:  " << t_tiled << " ms\n";
  std::cout << "naive forward:  " << t_naive << " ms  (" << t_naive / t_tiled << "x slower)\n";
  std::cout << "tiled backward: " << t_bwd << " ms\n";
  std::cout << "max |C_tiled - C_naive| = " << max_diff << "\n";
  return 0;
}
