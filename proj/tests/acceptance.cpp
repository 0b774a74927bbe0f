// Acceptance suite at the reference scale: lattice [ln K - 4, ln K + 4] with
// 401 nodes and 400 time steps, T = 1, b = 0.05, c = 0.3, rho = 0.5,
// lambda = 0.4, sigma = 0.25, gamma = 1, K = 1. Prints one verdict line per
// criterion and exits non-zero if any fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <sys/wait.h>

#include "indiff/config.hpp"
#include "indiff/io.hpp"
#include "indiff/selftest.hpp"

namespace fs = std::filesystem;
using namespace indiff;

namespace {

int run_cli(const std::string& cli, const std::string& args, const std::string& log) {
  const std::string cmd = cli + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  int failures = 0;

  RunConfig cfg;  // defaults are the reference configuration
  SelftestReport report = run_selftest(cfg);
  for (const auto& c : report.checks) {
    std::cout << "criterion " << c.id << " [" << (c.pass ? "PASS" : "FAIL") << "] "
              << c.name << ": measured " << format_double(c.measured) << " vs threshold "
              << format_double(c.threshold);
    if (!c.note.empty()) std::cout << " | " << c.note;
    std::cout << "\n";
    if (!c.pass) ++failures;
  }

  // criterion 11: two CLI selftest runs on the same configuration must
  // produce identical reports
  {
    bool pass = false;
    std::string detail;
    if (argc < 2) {
      detail = "no CLI path supplied";
    } else {
      const fs::path base = fs::temp_directory_path() / "indiff_acceptance";
      fs::remove_all(base);
      fs::create_directories(base);
      const fs::path cfg_path = base / "reference.cfg";
      write_file_atomic(cfg_path, serialize_config(cfg));
      const fs::path d1 = base / "run1", d2 = base / "run2";
      const int rc1 = run_cli(argv[1],
                              "selftest --config " + cfg_path.string() + " --out " +
                                  d1.string(),
                              (base / "run1.log").string());
      const int rc2 = run_cli(argv[1],
                              "selftest --config " + cfg_path.string() + " --out " +
                                  d2.string(),
                              (base / "run2.log").string());
      if (rc1 == 0 && rc2 == 0) {
        const std::string r1 = read_file(d1 / "selftest_report.txt");
        const std::string r2 = read_file(d2 / "selftest_report.txt");
        pass = !r1.empty() && r1 == r2;
        detail = pass ? "reports byte-identical" : "reports differ";
      } else {
        detail = "selftest exit codes " + std::to_string(rc1) + ", " + std::to_string(rc2);
      }
      if (pass) fs::remove_all(base);
    }
    std::cout << "criterion 11 [" << (pass ? "PASS" : "FAIL")
              << "] reproducible selftest: " << detail << "\n";
    if (!pass) ++failures;
  }

  const auto t1 = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(t1 - t0).count();
  std::cout << (failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << " ("
            << format_double(seconds, 3) << " s)\n";
  return failures == 0 ? 0 : 1;
}
