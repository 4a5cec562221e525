#include "selfrobust/report.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace selfrobust {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + path + "': " + ec.message());
}

std::string csv_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_manifest(const std::string& dir, const ExperimentConfig& cfg) {
  json m;
  m["schema"] = kReportSchema;
  m["kind"] = experiment_kind_name(cfg.kind);
  m["config_hash"] = hex64(cfg.config_hash);
  m["seed"] = cfg.seed;
  m["code_version"] = kCodeVersion;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  m["timestamp"] = stamp;
  write_text_file(dir + "/manifest.json", m.dump(2) + "\n");
}

std::string summarize_report(const std::string& run_dir) {
  const json r = json::parse(read_text_file(run_dir + "/report.json"));
  std::ostringstream os;
  const std::string kind = r.at("kind").get<std::string>();
  os << "run: " << run_dir << "\nkind: " << kind << "\n";
  if (kind == "adv") {
    os << "clean accuracy: " << r.at("clean_accuracy").get<double>() << "\n";
    if (r.contains("sweep")) {
      os << "robust accuracy by epsilon (/255):\n";
      for (const auto& p : r.at("sweep"))
        os << "  eps " << p.at("epsilon_units").get<int>() << ": "
           << p.at("accuracy").get<double>() << "\n";
    }
  } else if (kind == "corruptions") {
    os << "clean accuracy: " << r.at("clean_accuracy").get<double>() << "\n";
    os << "per-kind mean accuracy:\n";
    for (const auto& [name, acc] : r.at("kind_means").items())
      os << "  " << name << ": " << acc.get<double>() << "\n";
    os << "grand mean: " << r.at("grand_mean").get<double>() << "\n";
  } else if (kind == "labelnoise") {
    os << "error by corruption strength:\n";
    for (const auto& p : r.at("per_strength"))
      os << "  s=" << p.at("strength").get<double>() << ": "
         << p.at("test_error").get<double>() << "\n";
    os << "mean error: " << r.at("mean_error").get<double>() << "\n";
  } else if (kind == "ood") {
    const auto& methods = r.at("methods");
    os << "AUROC by held-in class:\n";
    const auto& table = r.at("auroc_table");
    const auto& classes = r.at("classes");
    for (std::size_t i = 0; i < table.size(); ++i) {
      os << "  class " << classes[i].get<int>() << ":";
      for (std::size_t m = 0; m < methods.size(); ++m)
        os << " " << methods[m].get<std::string>() << "="
           << table[i][m].get<double>();
      os << "\n";
    }
    os << "mean AUROC:";
    const auto& means = r.at("mean_auroc");
    for (std::size_t m = 0; m < methods.size(); ++m)
      os << " " << methods[m].get<std::string>() << "=" << means[m].get<double>();
    os << "\n";
  } else {
    os << "(unrecognized report kind)\n";
  }
  return os.str();
}

}  // namespace selfrobust
