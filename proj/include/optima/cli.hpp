#pragma once

#include <optional>
#include <string>
#include <vector>

namespace optima {

// Exit codes: 0 success, 2 config/schema error, 3 runtime numerical failure,
// 4 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitVerify = 4;

int cmd_gen_data(const std::string& config_path, const std::string& out_dir);

/// Trains the main arm plus every configured baseline arm, evaluates each,
/// and assembles out_dir/report.json. Per-arm artifacts land under
/// out_dir/<arm>/.
int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override = std::nullopt);

int cmd_eval(const std::string& config_path, const std::string& out_dir);

std::vector<std::string> verify_suite_names();
int cmd_verify(const std::string& config_path, const std::string& out_dir, bool list_only,
               const std::vector<std::string>& suites);

int cmd_report(const std::string& report_path, const std::string& out_dir);

}  // namespace optima
