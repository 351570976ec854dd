// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors
//
// auxdpo: toy tables, sweeps and general fits from INI configs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "auxdpo/config.hpp"
#include "auxdpo/experiments.hpp"

namespace fs = std::filesystem;
using namespace auxdpo;

namespace {

constexpr int kFailed = 1;
constexpr int kBadInput = 2;
constexpr int kIoError = 3;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string output_dir(const std::string& flag, const std::string& fallback = {}) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("AUXDPO_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

template <typename Writer>
void write_file(const std::string& dir, const std::string& name, Writer&& writer) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const fs::path path = fs::path(dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  writer(out);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<LossKind> parse_methods(const std::string& text) {
  std::vector<LossKind> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(parse_loss_kind(item));
  }
  return out;
}

void emit(std::ostream& out, const ResultTable& table, const std::string& format) {
  if (format == "csv") {
    emit_csv(out, table);
  } else {
    emit_markdown(out, table);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPO, IPO, DPOP and AuxDPO on small softmax policies"};
  app.require_subcommand(1);

  std::string variant, methods, format = "markdown", out_flag;
  bool check = false;
  auto* toy = app.add_subcommand("toy", "three-response toy tables");
  toy->add_option("--variant", variant, "imbalanced or balanced")
      ->required()
      ->check(CLI::IsMember({"imbalanced", "balanced"}));
  toy->add_option("--methods", methods, "comma-separated subset of dpo,ipo,dpop,auxdpo");
  toy->add_option("--format", format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));
  toy->add_option("--out", out_flag, "output directory (default $AUXDPO_OUTPUT_DIR)");
  toy->add_flag("--check", check, "fail unless the table matches the reference values");

  std::string grid_file;
  double beta = 1.0;
  auto* counts = app.add_subcommand("sweep-counts", "DPO sensitivity to pair counts");
  counts->add_option("--grid", grid_file, "file of `n12 n23 n31` lines")->required();
  counts->add_option("--methods", methods, "comma-separated methods (default dpo)");
  counts->add_option("--beta", beta, "beta")->check(CLI::PositiveNumber);
  counts->add_option("--out", out_flag, "output directory");

  std::string betas_text = "1,10,100,1000";
  double offset = 0.3;
  std::uint64_t seed = 7;
  auto* betas = app.add_subcommand("sweep-beta", "approximation error versus beta");
  betas->add_option("--betas", betas_text, "comma-separated beta values");
  betas->add_option("--offset", offset, "theta - theta0 = offset / beta");
  betas->add_option("--seed", seed, "seed of the random tabular instance");
  betas->add_option("--out", out_flag, "output directory");
  betas->add_flag("--check", check, "fail unless slopes are within 0.3 of the predicted order");

  std::string config_file;
  auto* fit = app.add_subcommand("fit", "run the methods of a config file");
  fit->add_option("--config", config_file, "INI file")->required()->check(CLI::ExistingFile);
  fit->add_option("--format", format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));
  fit->add_option("--out", out_flag, "output directory");

  auto* diagnose = app.add_subcommand("diagnose", "geometry diagnostics for a config file");
  diagnose->add_option("--config", config_file, "INI file")->required()->check(CLI::ExistingFile);
  diagnose->add_option("--out", out_flag, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kBadInput;
  }

  try {
    if (toy->parsed()) {
      const auto v = parse_toy_variant(variant);
      const auto table = run_toy(v, parse_methods(methods));
      emit(std::cout, table, format);
      const auto dir = output_dir(out_flag);
      const std::string stem = "toy_" + variant;
      write_file(dir, stem + ".md", [&](std::ostream& o) { emit_markdown(o, table); });
      write_file(dir, stem + ".csv", [&](std::ostream& o) { emit_csv(o, table); });
      for (const auto& row : table.rows) {
        if (!row.error.empty()) continue;
        fmt::print(std::cerr, "{}: preference_reversal={} reward_reduction={}\n", row.method,
                   row.preference_reversal, row.reward_reduction);
      }
      bool pass = table.ok();
      if (check) {
        for (const auto& line : check_toy(table, v)) {
          fmt::print(std::cerr, "{} {}: {}\n", line.pass ? "PASS" : "FAIL", line.name, line.detail);
          pass = pass && line.pass;
        }
      }
      return pass ? 0 : kFailed;
    }

    if (counts->parsed()) {
      std::ifstream in(grid_file);
      if (!in) throw IoError("cannot open '" + grid_file + "'");
      const auto grid = read_count_grid(in);
      auto kinds = parse_methods(methods);
      if (kinds.empty()) kinds = {LossKind::dpo};
      const auto rows = run_count_sweep(grid, kinds, beta);
      emit_count_sweep_csv(std::cout, rows);
      write_file(output_dir(out_flag), "count_sweep.csv",
                 [&](std::ostream& o) { emit_count_sweep_csv(o, rows); });
      bool pass = true;
      for (const auto& r : rows) {
        pass = pass && r.converged;
        if (r.method != "dpo") continue;
        const bool n12_dominant = r.point.n12 > r.point.n23 && r.point.n12 > r.point.n31;
        const bool n31_dominant = r.point.n31 > r.point.n12 && r.point.n31 > r.point.n23;
        if (n12_dominant || n31_dominant) {
          fmt::print(std::cerr, "({:g},{:g},{:g}) {}: theta={:.4f} reversal={}\n", r.point.n12,
                     r.point.n23, r.point.n31, n12_dominant ? "n12-dominant" : "n31-dominant",
                     r.theta, r.preference_reversal);
        }
      }
      return pass ? 0 : kFailed;
    }

    if (betas->parsed()) {
      std::string cleaned = betas_text;
      const auto values = parse_number_list(cleaned);
      if (values.empty()) throw InvalidArgument("--betas is empty");
      const auto sweep = run_beta_sweep(values, offset, seed);
      emit_beta_sweep_csv(std::cout, sweep.rows);
      const auto dir = output_dir(out_flag);
      write_file(dir, "beta_sweep.csv", [&](std::ostream& o) { emit_beta_sweep_csv(o, sweep.rows); });
      write_file(dir, "beta_fits.csv", [&](std::ostream& o) { emit_beta_fits_csv(o, sweep.fits); });
      bool pass = true;
      for (const auto& f : sweep.fits) {
        fmt::print(std::cerr, "{}: slope {:.3f} (predicted {:g})\n", f.quantity, f.slope,
                   f.predicted_order);
        pass = pass && f.within(0.3);
      }
      return !check || pass ? 0 : kFailed;
    }

    if (fit->parsed()) {
      const auto spec = load_experiment(config_file);
      std::vector<OptimReport> reports;
      const auto table = run_experiment(spec, &reports);
      emit(std::cout, table, format);
      const auto dir = output_dir(out_flag, spec.output_dir);
      write_file(dir, spec.name + ".md", [&](std::ostream& o) { emit_markdown(o, table); });
      write_file(dir, spec.name + ".csv", [&](std::ostream& o) { emit_csv(o, table); });
      for (std::size_t i = 0; i < reports.size(); ++i) {
        if (!table.rows[i].error.empty()) continue;
        write_file(dir, spec.name + "_" + std::string(to_string(spec.methods[i])) + "_report.txt",
                   [&](std::ostream& o) { write_report(o, reports[i]); });
      }
      for (const auto& row : table.rows) {
        if (!row.error.empty()) fmt::print(std::cerr, "{} failed: {}\n", row.method, row.error);
      }
      return table.ok() ? 0 : kFailed;
    }

    if (diagnose->parsed()) {
      const auto spec = load_experiment(config_file);
      std::ostringstream text;
      write_diagnostics(text, spec);
      std::cout << text.str();
      write_file(output_dir(out_flag, spec.output_dir), spec.name + "_diagnostics.txt",
                 [&](std::ostream& o) { o << text.str(); });
      return 0;
    }
  } catch (const IoError& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kIoError;
  } catch (const InvalidArgument& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kBadInput;
  } catch (const NonFiniteInput& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kBadInput;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kFailed;
  }
  return 0;
}
