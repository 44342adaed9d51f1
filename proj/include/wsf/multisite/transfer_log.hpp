#pragma once

#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

namespace wsf::multisite {

enum class Direction { ToSite, FromSite };
// Everything that may cross a site boundary. There is deliberately no image payload.
enum class PayloadKind { Model, Bundle };

std::string to_string(Direction d);
std::string to_string(PayloadKind k);

struct TransferRecord {
  int step = 0;
  std::string site;
  Direction direction = Direction::ToSite;
  PayloadKind kind = PayloadKind::Model;
  std::size_t bytes = 0;
  double seconds = 0.0;
};

// Append-only audit of cross-site transfers.
class TransferLog {
 public:
  TransferLog() = default;
  TransferLog(const TransferLog& other) : records_(other.records()) {}
  TransferLog& operator=(const TransferLog& other);

  void append(TransferRecord record);
  std::vector<TransferRecord> records() const;
  std::size_t size() const;

  // Columns step,direction,kind,bytes,seconds, plus the site id.
  std::string csv() const;
  static TransferLog from_csv(std::string_view text);
  void write_csv(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mutex_;
  std::vector<TransferRecord> records_;
};

}  // namespace wsf::multisite
