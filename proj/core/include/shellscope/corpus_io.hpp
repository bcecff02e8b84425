#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "shellscope/session.hpp"

namespace shellscope::model {

inline constexpr int kSessionSchemaVersion = 1;

struct ReadStats {
  std::size_t records = 0;
  std::size_t utf8_replacements = 0;
};

/// Streaming reader for activity files: one JSON record per line with
/// `activity_id` and `lines`. Invalid UTF-8 bytes are replaced with U+FFFD
/// and counted. Malformed lines and duplicate ids raise DataError carrying
/// the line number; nothing is skipped silently.
class ActivityReader {
 public:
  explicit ActivityReader(const std::string& path);
  ~ActivityReader();
  ActivityReader(ActivityReader&&) noexcept;

  std::optional<RawActivity> next();
  const ReadStats& stats() const { return stats_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ReadStats stats_;
};

std::vector<RawActivity> read_activities(const std::string& path, ReadStats* stats = nullptr);
void write_activities(const std::vector<RawActivity>& activities, const std::string& path);

/// Sessions round-trip losslessly through these, field for field. Writing a
/// session with an empty command list is a validation error.
void write_sessions(const std::vector<Session>& sessions, const std::string& path);
std::vector<Session> read_sessions(const std::string& path);

}  // namespace shellscope::model
