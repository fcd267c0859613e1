#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "curate/ndjson.hpp"
#include "curate/preference.hpp"

namespace curate::annotsvc {

/// Seconds since the epoch.
using Clock = std::function<std::int64_t()>;
Clock SystemClock();

struct TaskInput {
  std::string task_id;
  /// Defaults to image_ref when empty.
  std::string image_id;
  std::string image_ref;
  std::string caption;
  std::string question;
  std::string answer_a;
  std::string answer_b;
};

enum class Status { kPending, kAssigned, kDone };
std::string_view StatusName(Status status);

/// What an annotator sees: answers in presentation order, no shuffle data.
struct TaskView {
  std::string task_id;
  std::string image_ref;
  std::string caption;
  std::string question;
  std::string answer_a;
  std::string answer_b;
  Status status = Status::kPending;
  std::optional<std::string> assigned_to;
  std::int64_t created_at = 0;
};

OrderedJson ToJson(const TaskView& view);
/// Throws InvalidArgument on schema violations.
TaskInput TaskInputFromJson(const Json& json);

struct Progress {
  std::size_t pending = 0;
  std::size_t assigned = 0;
  std::size_t done = 0;
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_annotator;
};

OrderedJson ToJson(const Progress& progress);

struct StoreOptions {
  std::filesystem::path data_dir;
  std::int64_t lease_seconds = 600;
  /// Annotations collected per task from distinct annotators.
  int redundancy = 1;
  /// Seeds the per-task answer-order shuffle.
  std::uint64_t seed = 0;
  /// Write a snapshot every this many events; 0 disables.
  std::size_t snapshot_every = 100;
  Clock clock;
};

enum class SubmitStatus { kRecorded, kUnchanged };

/// Annotation queue persisted as an append-only NDJSON event log
/// (events.ndjson) with an optional snapshot (snapshot.json). Opening a store
/// replays the log. All methods are safe to call concurrently.
class Store {
 public:
  explicit Store(StoreOptions options);
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// All-or-nothing. Throws Conflict on a duplicate task id,
  /// InvalidArgument on an invalid task.
  std::size_t Import(const std::vector<TaskInput>& tasks);

  /// Leases the oldest task the annotator may work on; returns the task the
  /// annotator already holds, if any. nullopt when nothing is available.
  std::optional<TaskView> Next(const std::string& annotator);

  /// `choice` refers to the presentation order. Throws NotFound,
  /// Conflict (no active lease for this annotator, or a different earlier
  /// answer) and InvalidArgument.
  SubmitStatus Submit(const std::string& task_id, const std::string& annotator,
                      preference::Choice choice);

  Progress GetProgress() const;
  /// The committed preferences in submission order, canonical answer order.
  std::vector<preference::HumanPreference> Committed() const;
  /// NDJSON bytes of Committed(), one record per line.
  std::string Export() const;

  void WriteSnapshot();
  std::size_t event_count() const;

 private:
  struct Task {
    TaskInput input;
    bool swapped = false;
    std::int64_t created_at = 0;
    std::uint64_t seq = 0;
    std::map<std::string, std::int64_t> leases;
    std::map<std::string, preference::Choice> answers;
  };

  void Replay();
  void Apply(const Json& event, bool from_log);
  void Append(const Json& event);
  Status StatusOf(const Task& task, std::int64_t now) const;
  std::size_t ActiveLeases(const Task& task, std::int64_t now) const;
  TaskView View(const Task& task, std::int64_t now) const;
  Json SnapshotJson() const;

  StoreOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, Task> tasks_;
  std::vector<std::string> order_;
  std::vector<preference::HumanPreference> committed_;
  std::size_t events_ = 0;
  std::ofstream log_;
};

struct ServerOptions {
  /// Required in X-Annotator-Token on API routes when non-empty.
  std::string token;
  /// Served at "/" when set.
  std::filesystem::path ui_dir;
  /// Served at "/images" when set.
  std::filesystem::path image_dir;
};

/// HTTP front for a Store:
///   POST /tasks/import, GET /tasks/next?annotator=ID,
///   POST /tasks/{id}/annotation, GET /export, GET /progress.
class Server {
 public:
  Server(Store& store, ServerOptions options);
  ~Server();

  /// Returns the bound port (an ephemeral one when `port` is 0), or -1.
  int Bind(const std::string& host, int port);
  /// Blocks until Stop().
  bool Listen();
  void Stop();
  void WaitUntilReady();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace curate::annotsvc
