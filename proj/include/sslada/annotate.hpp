#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sslada/harness.hpp"

namespace httplib {
class Server;
}

namespace sslada::annotate {

/// Version stamped on every JSON body and journal line.
inline constexpr int kSchemaVersion = 1;

enum class QueryStatus { pending, labeled };

struct QueryRecord {
  std::int64_t sample_id = 0;
  std::size_t round = 0;
  std::string domain;
  std::vector<double> features;
  QueryStatus status = QueryStatus::pending;
  int label = -1;
  std::string annotator;
};

struct RoundStatus {
  std::size_t round = 0;
  std::string domain;
  std::string cell;
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  std::size_t pending = 0;
  std::size_t labeled = 0;
  std::string phase;  // "awaiting_labels" or "complete"
};

enum class SubmitResult { accepted, duplicate, unknown_id, invalid_label, no_round };

struct SubmitOutcome {
  SubmitResult result = SubmitResult::no_round;
  int stored_label = -1;  // set for accepted and duplicate
};

/// The single active labeling round, persisted to an append-only JSON-lines
/// journal. Every line is flushed and fsynced before the call returns.
///
/// Journal lines, one object each, all carrying "schema_version":
///   {"type":"open","round":r,"domain":d,"cell":c,"seed":s,
///    "queries":[{"sample_id":i,"features":[...]}, ...]}
///   {"type":"label","sample_id":i,"label":0|1,"annotator":a}
///   {"type":"close"}   round finished, labels committed
///   {"type":"abort"}   round abandoned
/// Replaying the file restores an open round with its accepted labels.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path journal);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  /// Throws StateError if a round is already open.
  void open_round(const harness::LabelRequest& request);
  bool has_round() const;
  /// True when the open round was created for exactly this request.
  bool matches(const harness::LabelRequest& request) const;

  std::optional<RoundStatus> status() const;
  std::vector<QueryRecord> queries() const;
  SubmitOutcome submit(std::int64_t sample_id, int label, const std::string& annotator);

  /// Blocks until no label is pending; false on timeout or abort.
  bool wait_complete(double timeout_seconds);
  /// Labels in query order. Throws StateError unless complete.
  std::vector<int> close_round();
  void abort_round();

  /// Labels of an already closed round made for this exact request, if any.
  std::optional<std::vector<int>> committed(const harness::LabelRequest& request) const;

  const std::filesystem::path& journal() const { return path_; }

 private:
  struct Round {
    RoundStatus status;
    std::vector<QueryRecord> queries;
  };

  struct Committed {
    std::vector<std::int64_t> ids;
    std::vector<int> labels;
  };

  static std::string key(std::size_t round, const std::string& domain, const std::string& cell, std::uint64_t seed);
  void commit_locked();
  void replay();
  void append(const std::string& line);

  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<Round> round_;
  std::map<std::string, Committed> committed_;
};

/// HTTP front end over an AnnotationStore.
///   GET  /rounds/current           -> RoundStatus, 404 without a round
///   GET  /rounds/current/queries   -> {"queries": [QueryRecord...]}, 404 without a round
///   POST /labels {sample_id, label, annotator}
///        200 accepted, 409 duplicate (body has stored_label),
///        422 unknown id or label outside {0,1}, 404 no round, 400 bad JSON
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationStore& store);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws StateError if binding fails.
  int start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  AnnotationStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

std::string status_json(const RoundStatus& s);
std::string queries_json(const std::vector<QueryRecord>& q);

/// Labeler that publishes each request as a round and waits for a human (or
/// any HTTP client) to label it. Requests are served one at a time. A round
/// recovered from the journal is resumed when the same request arrives, and
/// requests already closed in the journal are answered from it.
class ServiceLabeler final : public harness::Labeler {
 public:
  ServiceLabeler(AnnotationStore& store, double timeout_seconds);
  std::vector<int> label(const harness::LabelRequest& request) override;

 private:
  AnnotationStore& store_;
  double timeout_;
  std::mutex serial_;
};

}  // namespace sslada::annotate
