// Micro-benchmark comparing the OpenMP transport kernel against the serial
// reference implementation on the production mesh.

#include "viv/operators.hpp"

#include <chrono>
#include <cstdio>
#include <random>

using namespace viv;

namespace {

double time_once(const Mesh& m, const FaceArrays<double>& a,
                 const FaceArrays<double>& b, KernelImpl impl, int reps) {
    Vec out;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) conv_apply(m, a, b, out, impl);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

} // namespace

int main(int argc, char** argv) {
    int reps = 200;
    double h = 0.125;
    if (argc > 1) reps = std::atoi(argv[1]);
    if (argc > 2) h = std::atof(argv[2]);

    MeshConfig cfg;
    cfg.h = h;
    Mesh m = build_mesh(cfg);
    std::printf("mesh %dx%d, %d velocity DOFs, %d reps\n", m.nx, m.ny, m.nf(), reps);

    std::mt19937_64 rng(1);
    std::normal_distribution<double> dist;
    Vec za(m.nz()), zb(m.nz());
    for (int i = 0; i < m.nz(); ++i) {
        za[i] = dist(rng);
        zb[i] = dist(rng);
    }
    const auto a = scatter_faces<double>(m, za);
    const auto b = scatter_faces<double>(m, zb);

    // warm-up + correctness guard
    Vec s_out, p_out;
    conv_apply(m, a, b, s_out, KernelImpl::Serial);
    conv_apply(m, a, b, p_out, KernelImpl::Parallel);
    const double dev = (s_out - p_out).lpNorm<Eigen::Infinity>();
    std::printf("serial vs parallel max deviation: %.3e\n", dev);

    const double ts = time_once(m, a, b, KernelImpl::Serial, reps);
    const double tp = time_once(m, a, b, KernelImpl::Parallel, reps);
    const double mdofs_s = m.nf() / ts / 1e6;
    const double mdofs_p = m.nf() / tp / 1e6;
    std::printf("transport kernel serial:   %8.3f us/apply  (%7.1f MDOF/s)\n",
                ts * 1e6, mdofs_s);
    std::printf("transport kernel parallel: %8.3f us/apply  (%7.1f MDOF/s)\n",
                tp * 1e6, mdofs_p);
    std::printf("speedup: %.2fx\n", ts / tp);
    return dev == 0.0 ? 0 : 1;
}
