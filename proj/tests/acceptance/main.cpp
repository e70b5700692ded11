// Acceptance runner: one PASS/FAIL line per criterion on stdout.
#include <chrono>
#include <functional>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "criteria.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ucsd acceptance criteria"};
  std::vector<int> only;
  acc::Context ctx;
  ctx.work = ".";
  app.add_option("criteria", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 8));
  app.add_option("--cli", ctx.cli, "Path to the ucsd executable");
  app.add_option("--work", ctx.work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  std::set<int> wanted(only.begin(), only.end());
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8};

  const char* names[] = {"",
                         "gradient correctness",
                         "KL correctness",
                         "Langevin posterior oracle",
                         "consensus oracle",
                         "metric sanity suite",
                         "end-to-end toy training",
                         "diversity reproduction",
                         "reproducibility"};
  bool all = true;
  const auto report = [&](int id, const acc::Result& r, double seconds) {
    all = all && r.pass;
    std::cout << "criterion " << id << " " << names[id] << ": " << (r.pass ? "PASS" : "FAIL") << " | " << r.detail
              << " | " << acc::fmt(seconds, "%.1f") << " s" << std::endl;
    for (const auto& n : r.notes) std::cout << "    " << n << std::endl;
  };
  const auto timed = [&](int id, const std::function<acc::Result()>& fn) {
    if (!wanted.count(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    const acc::Result r = fn();
    report(id, r, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  timed(1, acc::criterion_gradients);
  timed(2, acc::criterion_kl);
  timed(3, acc::criterion_langevin);
  timed(4, acc::criterion_consensus);
  timed(5, acc::criterion_metrics);
  if (wanted.count(6) || wanted.count(7)) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rs = acc::criteria_training(ctx);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (wanted.count(6)) report(6, rs[0], s);
    if (wanted.count(7)) report(7, rs[1], s);
  }
  timed(8, [&] { return acc::criterion_reproducibility(ctx); });
  return all ? 0 : 1;
}
