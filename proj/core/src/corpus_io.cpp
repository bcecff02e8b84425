#include "shellscope/corpus_io.hpp"

#include <nlohmann/json.hpp>

#include "shellscope/errors.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::model {

using nlohmann::json;

struct ActivityReader::Impl {
  std::ifstream in;
  std::string path;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen_ids;
};

ActivityReader::ActivityReader(const std::string& path) : impl_(std::make_unique<Impl>()) {
  impl_->in.open(path);
  impl_->path = path;
  if (!impl_->in) throw DataError("cannot open activity file: " + path);
}

ActivityReader::~ActivityReader() = default;
ActivityReader::ActivityReader(ActivityReader&&) noexcept = default;

std::optional<RawActivity> ActivityReader::next() {
  std::string line;
  while (std::getline(impl_->in, line)) {
    ++impl_->line_no;
    if (trim(line).empty()) continue;
    const std::string sane = utf8_sanitize(line, &stats_.utf8_replacements);
    json rec;
    try {
      rec = json::parse(sane);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed activity record: ") + e.what(), impl_->line_no);
    }
    if (!rec.is_object() || !rec.contains("activity_id") || !rec["activity_id"].is_string()) {
      throw DataError("activity record missing string field 'activity_id'", impl_->line_no);
    }
    if (!rec.contains("lines") || !rec["lines"].is_array()) {
      throw DataError("activity record missing array field 'lines'", impl_->line_no);
    }
    RawActivity a;
    a.activity_id = rec["activity_id"].get<std::string>();
    if (a.activity_id.empty()) throw DataError("empty activity_id", impl_->line_no);
    if (!impl_->seen_ids.insert(a.activity_id).second) {
      throw DataError("duplicate activity_id: " + a.activity_id, impl_->line_no);
    }
    for (const auto& l : rec["lines"]) {
      if (!l.is_string()) throw DataError("non-string entry in 'lines'", impl_->line_no);
      a.lines.push_back(l.get<std::string>());
    }
    if (rec.contains("captured_at") && rec["captured_at"].is_string()) {
      a.captured_at = rec["captured_at"].get<std::string>();
    }
    ++stats_.records;
    return a;
  }
  return std::nullopt;
}

std::vector<RawActivity> read_activities(const std::string& path, ReadStats* stats) {
  ActivityReader reader(path);
  std::vector<RawActivity> out;
  while (auto a = reader.next()) out.push_back(std::move(*a));
  if (stats) *stats = reader.stats();
  return out;
}

void write_activities(const std::vector<RawActivity>& activities, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  std::size_t dummy = 0;
  for (const auto& a : activities) {
    json rec;
    rec["activity_id"] = a.activity_id;
    json lines = json::array();
    for (const auto& l : a.lines) lines.push_back(utf8_sanitize(l, &dummy));
    rec["lines"] = std::move(lines);
    if (a.captured_at) rec["captured_at"] = *a.captured_at;
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

namespace {

json command_to_json(const CommandLine& c) {
  return json{{"text", c.text}, {"output_lines", c.output_line_count}, {"error", c.had_error_output}};
}

CommandLine command_from_json(const json& j, std::size_t line_no) {
  if (!j.is_object() || !j.contains("text")) throw DataError("bad command record", line_no);
  CommandLine c;
  c.text = j["text"].get<std::string>();
  c.output_line_count = j.value("output_lines", 0u);
  c.had_error_output = j.value("error", false);
  return c;
}

void validate_session(const Session& s) {
  if (s.session_id.empty()) throw DataError("session with empty session_id");
  if (s.commands.empty()) throw DataError("session " + s.session_id + " has no commands");
  if (s.anomaly) {
    const auto& a = *s.anomaly;
    double sum = 0.0;
    for (const auto& [_, v] : a.per_detector_normalized) sum += v;
    const double mean = a.per_detector_normalized.empty() ? 0.0 : sum / static_cast<double>(a.per_detector_normalized.size());
    if (std::abs(mean - a.ensemble_score) > 1e-12) {
      throw DataError("session " + s.session_id + ": ensemble score is not the mean of normalized scores");
    }
  }
}

}  // namespace

void write_sessions(const std::vector<Session>& sessions, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  for (const auto& s : sessions) {
    validate_session(s);
    json rec;
    rec["schema_version"] = kSessionSchemaVersion;
    rec["session_id"] = s.session_id;
    json cmds = json::array();
    for (const auto& c : s.commands) cmds.push_back(command_to_json(c));
    rec["commands"] = std::move(cmds);
    rec["prompts"] = s.prompts;
    json tags = json::array();
    for (const auto& t : s.tags) {
      tags.push_back(json{{"technique_id", t.technique_id},
                          {"technique_name", t.technique_name},
                          {"command_index", t.command_index},
                          {"matched_text", t.matched_text}});
    }
    rec["tags"] = std::move(tags);
    rec["keyword_hits"] = s.keyword_hits;
    rec["label"] = label_to_string(s.label);
    if (s.anomaly) {
      rec["anomaly"] = json{{"raw", s.anomaly->per_detector_raw},
                            {"normalized", s.anomaly->per_detector_normalized},
                            {"ensemble", s.anomaly->ensemble_score}};
    }
    if (!s.cycles.empty()) {
      json cyc = json::array();
      for (const auto& c : s.cycles) {
        cyc.push_back(json{{"start", c.start_index}, {"period", c.period}, {"repeats", c.repeats}});
      }
      rec["cycles"] = std::move(cyc);
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Session> read_sessions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open session file: " + path);
  std::vector<Session> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed session record: ") + e.what(), line_no);
    }
    const int version = rec.value("schema_version", 0);
    if (version > kSessionSchemaVersion) throw SchemaVersionError(version, kSessionSchemaVersion, line_no);
    if (version < 1) throw DataError("session record missing schema_version", line_no);
    Session s;
    s.session_id = rec.at("session_id").get<std::string>();
    for (const auto& c : rec.at("commands")) s.commands.push_back(command_from_json(c, line_no));
    if (rec.contains("prompts")) s.prompts = rec["prompts"].get<std::vector<std::string>>();
    if (rec.contains("tags")) {
      for (const auto& t : rec["tags"]) {
        TechniqueTag tag;
        tag.technique_id = t.at("technique_id").get<std::string>();
        tag.technique_name = t.value("technique_name", "");
        tag.command_index = t.value("command_index", 0u);
        tag.matched_text = t.value("matched_text", "");
        if (tag.command_index >= s.commands.size()) {
          throw DataError("tag command_index out of range in session " + s.session_id, line_no);
        }
        s.tags.push_back(std::move(tag));
      }
    }
    if (rec.contains("keyword_hits")) {
      s.keyword_hits = rec["keyword_hits"].get<std::map<std::string, std::uint32_t>>();
    }
    s.label = label_from_string(rec.value("label", "unlabeled"));
    if (rec.contains("anomaly") && !rec["anomaly"].is_null()) {
      AnomalyRecord a;
      a.per_detector_raw = rec["anomaly"].at("raw").get<std::map<std::string, double>>();
      a.per_detector_normalized = rec["anomaly"].at("normalized").get<std::map<std::string, double>>();
      a.ensemble_score = rec["anomaly"].at("ensemble").get<double>();
      s.anomaly = std::move(a);
    }
    if (rec.contains("cycles")) {
      for (const auto& c : rec["cycles"]) {
        s.cycles.push_back(CycleAnnotation{c.at("start").get<std::size_t>(), c.at("period").get<std::size_t>(),
                                           c.at("repeats").get<std::uint32_t>()});
      }
    }
    validate_session(s);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace shellscope::model
