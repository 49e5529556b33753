// Minimal look inside dynamic routing: run one forward pass on random
// capsules and print how the soft updates spread coupling mass, plus the
// row-sum bookkeeping (each row accumulates to 1 + r*eta).

#include <cstdio>

#include "arcnet/arcnet.hpp"

int main() {
  using namespace arcnet;
  Rng rng(42);

  const int n_in = 6, n_out = 3, d_in = 8, d_out = 4;
  const int r = 3;
  const float eta = 0.1f;

  Tensor u({n_in, d_in}), w({n_in, n_out, d_in, d_out}), b({n_in, n_out});
  for (auto& v : u.data) v = rng.gauss();
  for (auto& v : w.data) v = rng.gauss();

  Tape t(false);
  RoutingTraceT<float> trace;
  const auto v = ops::route(t, t.constant(u), t.constant(w), t.constant(b), r, eta, &trace);

  std::printf("coupling after %d iterations (eta %.2f):\n", r, eta);
  for (int i = 0; i < n_in; ++i) {
    float row = 0.0f;
    for (int j = 0; j < n_out; ++j) {
      std::printf("  %.4f", trace.coupling(i, j));
      row += trace.coupling(i, j);
    }
    std::printf("   row sum %.4f\n", row);
  }
  std::printf("output capsule norms:");
  for (const float norm : class_scores(t.value(v))) std::printf("  %.4f", norm);
  std::printf("\n");
  return 0;
}
