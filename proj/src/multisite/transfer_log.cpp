#include "wsf/multisite/transfer_log.hpp"

#include <cstdio>
#include <sstream>

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"

namespace wsf::multisite {

std::string to_string(Direction d) { return d == Direction::ToSite ? "to-site" : "from-site"; }
std::string to_string(PayloadKind k) { return k == PayloadKind::Model ? "model" : "bundle"; }

TransferLog& TransferLog::operator=(const TransferLog& other) {
  if (this != &other) {
    auto copy = other.records();
    std::lock_guard lock(mutex_);
    records_ = std::move(copy);
  }
  return *this;
}

void TransferLog::append(TransferRecord record) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(record));
}

std::vector<TransferRecord> TransferLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t TransferLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::string TransferLog::csv() const {
  std::ostringstream out;
  out << "step,direction,kind,bytes,seconds,site\n";
  char buf[32];
  for (const auto& r : records()) {
    std::snprintf(buf, sizeof buf, "%.6f", r.seconds);
    out << r.step << ',' << to_string(r.direction) << ',' << to_string(r.kind) << ',' << r.bytes << ',' << buf << ','
        << r.site << '\n';
  }
  return out.str();
}

TransferLog TransferLog::from_csv(std::string_view text) {
  TransferLog log;
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  if (line.rfind("step,direction,kind,bytes,seconds", 0) != 0) throw DataError("not a transfer log");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 5) throw DataError("bad transfer log line: " + line);
    TransferRecord r;
    r.step = std::stoi(f[0]);
    if (f[1] == "to-site") r.direction = Direction::ToSite;
    else if (f[1] == "from-site") r.direction = Direction::FromSite;
    else throw DataError("bad transfer direction: " + f[1]);
    if (f[2] == "model") r.kind = PayloadKind::Model;
    else if (f[2] == "bundle") r.kind = PayloadKind::Bundle;
    else throw DataError("bad transfer payload kind: " + f[2]);
    r.bytes = std::stoull(f[3]);
    r.seconds = std::stod(f[4]);
    if (f.size() > 5) r.site = f[5];
    log.append(std::move(r));
  }
  return log;
}

void TransferLog::write_csv(const std::filesystem::path& path) const { write_file(path, csv()); }

}  // namespace wsf::multisite
