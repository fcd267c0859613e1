#include "curate/annotsvc.hpp"

#include <httplib.h>

#include <chrono>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::annotsvc {
namespace {

constexpr const char* kEventsFile = "events.ndjson";
constexpr const char* kSnapshotFile = "snapshot.json";

using preference::Choice;

Choice Unshuffle(Choice shown, bool swapped) {
  if (!swapped) return shown;
  if (shown == Choice::kFirst) return Choice::kSecond;
  if (shown == Choice::kSecond) return Choice::kFirst;
  return shown;
}

std::string RequireString(const Json& j, const char* key, bool allow_empty = false) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw Error(Errc::kInvalidArgument, std::string("field '") + key + "' must be a string");
  }
  auto s = it->get<std::string>();
  if (!allow_empty && s.empty()) {
    throw Error(Errc::kInvalidArgument, std::string("field '") + key + "' must not be empty");
  }
  return s;
}

Json TaskInputJson(const TaskInput& t) {
  return Json{{"task_id", t.task_id},   {"image_id", t.image_id}, {"image_ref", t.image_ref},
              {"caption", t.caption},   {"question", t.question}, {"answer_a", t.answer_a},
              {"answer_b", t.answer_b}};
}

}  // namespace

Clock SystemClock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

std::string_view StatusName(Status status) {
  switch (status) {
    case Status::kPending: return "pending";
    case Status::kAssigned: return "assigned";
    case Status::kDone: break;
  }
  return "done";
}

OrderedJson ToJson(const TaskView& v) {
  OrderedJson j;
  j["task_id"] = v.task_id;
  j["image_ref"] = v.image_ref;
  j["caption"] = v.caption;
  j["question"] = v.question;
  j["answer_a"] = v.answer_a;
  j["answer_b"] = v.answer_b;
  j["status"] = StatusName(v.status);
  j["assigned_to"] = v.assigned_to ? OrderedJson(*v.assigned_to) : OrderedJson(nullptr);
  j["created_at"] = v.created_at;
  return j;
}

TaskInput TaskInputFromJson(const Json& j) {
  if (!j.is_object()) throw Error(Errc::kInvalidArgument, "task must be an object");
  TaskInput t;
  t.task_id = RequireString(j, "task_id");
  if (t.task_id.find('/') != std::string::npos) {
    throw Error(Errc::kInvalidArgument, "task_id must not contain '/'");
  }
  t.image_ref = RequireString(j, "image_ref");
  t.image_id = j.contains("image_id") ? RequireString(j, "image_id") : t.image_ref;
  t.caption = j.contains("caption") ? RequireString(j, "caption", true) : "";
  t.question = RequireString(j, "question");
  t.answer_a = RequireString(j, "answer_a");
  t.answer_b = RequireString(j, "answer_b");
  return t;
}

OrderedJson ToJson(const Progress& p) {
  OrderedJson j;
  j["pending"] = p.pending;
  j["assigned"] = p.assigned;
  j["done"] = p.done;
  j["total"] = p.total;
  OrderedJson per = OrderedJson::object();
  for (const auto& [k, v] : p.per_annotator) per[k] = v;
  j["per_annotator"] = per;
  return j;
}

Store::Store(StoreOptions options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = SystemClock();
  if (options_.redundancy < 1) throw Error(Errc::kConfigError, "redundancy must be >= 1");
  if (options_.lease_seconds < 1) throw Error(Errc::kConfigError, "lease_seconds must be >= 1");
  std::filesystem::create_directories(options_.data_dir);
  Replay();
  log_.open(options_.data_dir / kEventsFile, std::ios::app | std::ios::binary);
  if (!log_) throw Error(Errc::kIoError, "cannot open event log in " + options_.data_dir.string());
}

Store::~Store() = default;

void Store::Replay() {
  const auto log_path = options_.data_dir / kEventsFile;
  std::vector<Json> events;
  if (std::filesystem::exists(log_path)) {
    std::string text = ReadTextFile(log_path);
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      ++line_no;
      if (nl == std::string::npos) {
        // A torn final write: drop it so the log ends on a record boundary.
        std::filesystem::resize_file(log_path, pos);
        break;
      }
      const auto line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      try {
        events.push_back(Json::parse(line));
      } catch (const Json::exception&) {
        throw Error(Errc::kMalformedRecord,
                    "event log line " + std::to_string(line_no) + ": invalid JSON");
      }
    }
  }

  std::size_t start = 0;
  const auto snap_path = options_.data_dir / kSnapshotFile;
  if (std::filesystem::exists(snap_path)) {
    try {
      const auto snap = Json::parse(ReadTextFile(snap_path));
      const auto count = snap.at("event_count").get<std::size_t>();
      if (count <= events.size()) {
        for (const auto& t : snap.at("tasks")) {
          Task task;
          task.input = TaskInputFromJson(t.at("input"));
          task.swapped = t.at("swapped").get<bool>();
          task.created_at = t.at("created_at").get<std::int64_t>();
          task.seq = t.at("seq").get<std::uint64_t>();
          task.leases = t.at("leases").get<std::map<std::string, std::int64_t>>();
          for (const auto& [who, c] : t.at("answers").items()) {
            task.answers[who] = *preference::ParseChoice(c.get<std::string>());
          }
          order_.push_back(task.input.task_id);
          tasks_.emplace(task.input.task_id, std::move(task));
        }
        for (const auto& p : snap.at("committed")) {
          committed_.push_back(preference::HumanPreferenceFromJson(p));
        }
        start = count;
      }
    } catch (const std::exception&) {
      tasks_.clear();
      order_.clear();
      committed_.clear();
      start = 0;
    }
  }
  for (std::size_t i = start; i < events.size(); ++i) Apply(events[i], true);
  events_ = events.size();
}

void Store::Apply(const Json& e, bool) {
  const auto type = e.at("type").get<std::string>();
  if (type == "import") {
    const auto at = e.at("at").get<std::int64_t>();
    for (const auto& t : e.at("tasks")) {
      Task task;
      task.input = TaskInputFromJson(t);
      task.swapped = t.at("swapped").get<bool>();
      task.created_at = at;
      task.seq = order_.size();
      order_.push_back(task.input.task_id);
      tasks_.emplace(task.input.task_id, std::move(task));
    }
  } else if (type == "lease") {
    auto& task = tasks_.at(e.at("task_id").get<std::string>());
    task.leases[e.at("annotator").get<std::string>()] = e.at("expires_at").get<std::int64_t>();
  } else if (type == "annotation") {
    const auto pref = preference::HumanPreferenceFromJson(e.at("preference"));
    auto& task = tasks_.at(pref.task_id);
    task.leases.erase(pref.annotator);
    task.answers[pref.annotator] = pref.choice;
    committed_.push_back(pref);
  } else {
    throw Error(Errc::kMalformedRecord, "unknown event type '" + type + "'");
  }
}

void Store::Append(const Json& event) {
  log_ << event.dump() << '\n';
  log_.flush();
  if (!log_) throw Error(Errc::kIoError, "event log write failed");
  ++events_;
  Apply(event, false);
  if (options_.snapshot_every > 0 && events_ % options_.snapshot_every == 0) {
    WriteTextFile(options_.data_dir / (std::string(kSnapshotFile) + ".tmp"), SnapshotJson().dump());
    std::filesystem::rename(options_.data_dir / (std::string(kSnapshotFile) + ".tmp"),
                            options_.data_dir / kSnapshotFile);
  }
}

Json Store::SnapshotJson() const {
  Json tasks = Json::array();
  for (const auto& id : order_) {
    const auto& t = tasks_.at(id);
    Json answers = Json::object();
    for (const auto& [who, c] : t.answers) answers[who] = preference::ChoiceName(c);
    tasks.push_back({{"input", TaskInputJson(t.input)},
                     {"swapped", t.swapped},
                     {"created_at", t.created_at},
                     {"seq", t.seq},
                     {"leases", t.leases},
                     {"answers", answers}});
  }
  Json committed = Json::array();
  for (const auto& p : committed_) committed.push_back(Json::parse(preference::ToJson(p).dump()));
  return {{"event_count", events_}, {"tasks", tasks}, {"committed", committed}};
}

void Store::WriteSnapshot() {
  std::lock_guard lock(mu_);
  const auto tmp = options_.data_dir / (std::string(kSnapshotFile) + ".tmp");
  WriteTextFile(tmp, SnapshotJson().dump());
  std::filesystem::rename(tmp, options_.data_dir / kSnapshotFile);
}

std::size_t Store::event_count() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::size_t Store::ActiveLeases(const Task& task, std::int64_t now) const {
  std::size_t n = 0;
  for (const auto& [who, expires] : task.leases) {
    if (expires > now) ++n;
  }
  return n;
}

Status Store::StatusOf(const Task& task, std::int64_t now) const {
  if (task.answers.size() >= static_cast<std::size_t>(options_.redundancy)) return Status::kDone;
  return ActiveLeases(task, now) > 0 ? Status::kAssigned : Status::kPending;
}

TaskView Store::View(const Task& task, std::int64_t now) const {
  TaskView v;
  v.task_id = task.input.task_id;
  v.image_ref = task.input.image_ref;
  v.caption = task.input.caption;
  v.question = task.input.question;
  v.answer_a = task.swapped ? task.input.answer_b : task.input.answer_a;
  v.answer_b = task.swapped ? task.input.answer_a : task.input.answer_b;
  v.status = StatusOf(task, now);
  for (const auto& [who, expires] : task.leases) {
    if (expires > now) {
      v.assigned_to = who;
      break;
    }
  }
  v.created_at = task.created_at;
  return v;
}

std::size_t Store::Import(const std::vector<TaskInput>& tasks) {
  std::lock_guard lock(mu_);
  std::set<std::string> ids;
  Json list = Json::array();
  for (const auto& t : tasks) {
    TaskInputFromJson(TaskInputJson(t));
    if (tasks_.count(t.task_id) || !ids.insert(t.task_id).second) {
      throw Error(Errc::kConflict, "duplicate task_id " + t.task_id);
    }
    auto j = TaskInputJson(t);
    if (t.image_id.empty()) j["image_id"] = t.image_ref;
    j["swapped"] = (DeriveSeed(options_.seed, "blind:" + t.task_id) & 1) == 1;
    list.push_back(j);
  }
  if (!tasks.empty()) Append({{"type", "import"}, {"at", options_.clock()}, {"tasks", list}});
  return tasks.size();
}

std::optional<TaskView> Store::Next(const std::string& annotator) {
  if (annotator.empty()) throw Error(Errc::kInvalidArgument, "annotator is required");
  std::lock_guard lock(mu_);
  const auto now = options_.clock();
  for (const auto& id : order_) {
    const auto& task = tasks_.at(id);
    auto it = task.leases.find(annotator);
    if (it != task.leases.end() && it->second > now && !task.answers.count(annotator)) {
      auto v = View(task, now);
      v.assigned_to = annotator;
      return v;
    }
  }
  const auto need = static_cast<std::size_t>(options_.redundancy);
  for (const auto& id : order_) {
    const auto& task = tasks_.at(id);
    if (task.answers.count(annotator)) continue;
    if (task.answers.size() + ActiveLeases(task, now) >= need) continue;
    Append({{"type", "lease"},
            {"task_id", id},
            {"annotator", annotator},
            {"expires_at", now + options_.lease_seconds}});
    auto v = View(task, now);
    v.assigned_to = annotator;
    return v;
  }
  return std::nullopt;
}

SubmitStatus Store::Submit(const std::string& task_id, const std::string& annotator,
                           Choice choice) {
  if (annotator.empty()) throw Error(Errc::kInvalidArgument, "annotator is required");
  std::lock_guard lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw Error(Errc::kNotFound, "unknown task " + task_id);
  const auto& task = it->second;
  const Choice canonical = Unshuffle(choice, task.swapped);
  if (auto done = task.answers.find(annotator); done != task.answers.end()) {
    if (done->second == canonical) return SubmitStatus::kUnchanged;
    throw Error(Errc::kConflict, "task " + task_id + " already annotated by " + annotator);
  }
  const auto now = options_.clock();
  auto lease = task.leases.find(annotator);
  if (lease == task.leases.end() || lease->second <= now) {
    throw Error(Errc::kConflict, "task " + task_id + " is not leased to " + annotator);
  }
  preference::HumanPreference pref{task_id,
                                   task.input.image_id,
                                   task.input.question,
                                   task.input.answer_a,
                                   task.input.answer_b,
                                   canonical,
                                   annotator,
                                   now};
  Append({{"type", "annotation"}, {"preference", Json::parse(preference::ToJson(pref).dump())}});
  return SubmitStatus::kRecorded;
}

Progress Store::GetProgress() const {
  std::lock_guard lock(mu_);
  const auto now = options_.clock();
  Progress p;
  for (const auto& [id, task] : tasks_) {
    switch (StatusOf(task, now)) {
      case Status::kPending: ++p.pending; break;
      case Status::kAssigned: ++p.assigned; break;
      case Status::kDone: ++p.done; break;
    }
  }
  p.total = tasks_.size();
  for (const auto& pref : committed_) ++p.per_annotator[pref.annotator];
  return p;
}

std::vector<preference::HumanPreference> Store::Committed() const {
  std::lock_guard lock(mu_);
  return committed_;
}

std::string Store::Export() const {
  std::string out;
  for (const auto& p : Committed()) out += preference::ToJson(p).dump() + "\n";
  return out;
}

struct Server::Impl {
  Impl(Store& s, ServerOptions o) : store(s), options(std::move(o)) {}
  Store& store;
  ServerOptions options;
  httplib::Server http;
};

namespace {

int HttpStatus(Errc code) {
  switch (code) {
    case Errc::kNotFound: return 404;
    case Errc::kConflict:
    case Errc::kDuplicateId: return 409;
    case Errc::kInvalidArgument:
    case Errc::kMalformedRecord: return 400;
    default: return 500;
  }
}

void SendError(httplib::Response& res, int status, std::string_view name, const std::string& msg) {
  res.status = status;
  res.set_content(Json{{"error", name}, {"message", msg}}.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler Guard(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      SendError(res, HttpStatus(e.code()), e.name(), e.what());
    } catch (const Json::exception& e) {
      SendError(res, 400, "InvalidArgument", e.what());
    }
  };
}

}  // namespace

Server::Server(Store& store, ServerOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(options))) {
  auto& http = impl_->http;
  Impl* self = impl_.get();

  http.set_pre_routing_handler([self](const httplib::Request& req, httplib::Response& res) {
    const auto& p = req.path;
    const bool api = p.rfind("/tasks", 0) == 0 || p == "/export" || p == "/progress";
    if (api && !self->options.token.empty() &&
        req.get_header_value("X-Annotator-Token") != self->options.token) {
      SendError(res, 401, "Unauthorized", "missing or wrong X-Annotator-Token");
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  http.Post("/tasks/import", Guard([self](const httplib::Request& req, httplib::Response& res) {
              const auto body = Json::parse(req.body);
              const Json& list = body.is_object() && body.contains("tasks") ? body.at("tasks") : body;
              if (!list.is_array()) throw Error(Errc::kInvalidArgument, "expected a list of tasks");
              std::vector<TaskInput> tasks;
              for (const auto& t : list) tasks.push_back(TaskInputFromJson(t));
              const auto n = self->store.Import(tasks);
              res.set_content(Json{{"imported", n}}.dump(), "application/json");
            }));

  http.Get("/tasks/next", Guard([self](const httplib::Request& req, httplib::Response& res) {
             const auto annotator = req.get_param_value("annotator");
             auto task = self->store.Next(annotator);
             if (!task) {
               res.status = 204;
               return;
             }
             res.set_content(ToJson(*task).dump(), "application/json");
           }));

  http.Post(R"(/tasks/([^/]+)/annotation)",
            Guard([self](const httplib::Request& req, httplib::Response& res) {
              const auto body = Json::parse(req.body);
              if (!body.is_object()) throw Error(Errc::kInvalidArgument, "expected an object");
              const auto choice = preference::ParseChoice(RequireString(body, "choice"));
              if (!choice) throw Error(Errc::kInvalidArgument, "invalid choice");
              const auto status =
                  self->store.Submit(req.matches[1].str(), RequireString(body, "annotator"), *choice);
              res.set_content(
                  Json{{"status", status == SubmitStatus::kRecorded ? "recorded" : "unchanged"}}.dump(),
                  "application/json");
            }));

  http.Get("/export", Guard([self](const httplib::Request&, httplib::Response& res) {
             res.set_content(self->store.Export(), "application/x-ndjson");
           }));

  http.Get("/progress", Guard([self](const httplib::Request&, httplib::Response& res) {
             res.set_content(ToJson(self->store.GetProgress()).dump(), "application/json");
           }));

  if (!impl_->options.image_dir.empty()) {
    http.set_mount_point("/images", impl_->options.image_dir.string());
  }
  if (!impl_->options.ui_dir.empty()) http.set_mount_point("/", impl_->options.ui_dir.string());
}

Server::~Server() { Stop(); }

int Server::Bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool Server::Listen() { return impl_->http.listen_after_bind(); }

void Server::Stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

void Server::WaitUntilReady() { impl_->http.wait_until_ready(); }

}  // namespace curate::annotsvc
