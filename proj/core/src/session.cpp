#include "shellscope/session.hpp"

#include <unordered_set>

#include "shellscope/errors.hpp"

namespace shellscope::model {

std::string label_to_string(SessionLabel label) {
  switch (label) {
    case SessionLabel::Unlabeled:
      return "unlabeled";
    case SessionLabel::Normal:
      return "normal";
    case SessionLabel::Abnormal:
      return "abnormal";
    case SessionLabel::Abstained:
      return "abstained";
  }
  throw DataError("invalid session label value");
}

SessionLabel label_from_string(const std::string& s) {
  if (s == "unlabeled") return SessionLabel::Unlabeled;
  if (s == "normal") return SessionLabel::Normal;
  if (s == "abnormal") return SessionLabel::Abnormal;
  if (s == "abstained") return SessionLabel::Abstained;
  throw DataError("unknown session label: " + s);
}

std::string Session::joined_command_text() const {
  std::string out;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (i) out += '\n';
    out += commands[i].text;
  }
  return out;
}

std::vector<Session> dedupe_sessions(std::vector<Session> sessions, std::size_t* removed) {
  std::unordered_set<std::string> seen;
  std::vector<Session> out;
  out.reserve(sessions.size());
  std::size_t dropped = 0;
  for (auto& s : sessions) {
    if (seen.insert(s.joined_command_text()).second) {
      out.push_back(std::move(s));
    } else {
      ++dropped;
    }
  }
  if (removed) *removed += dropped;
  return out;
}

}  // namespace shellscope::model
