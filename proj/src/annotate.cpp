#include "sslada/annotate.hpp"

#include <unistd.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace sslada::annotate {
namespace {

using nlohmann::json;

const char* status_name(QueryStatus s) { return s == QueryStatus::labeled ? "labeled" : "pending"; }

json record_json(const QueryRecord& r) {
  json j = {{"sample_id", r.sample_id}, {"round", r.round},           {"domain", r.domain},
            {"features", r.features},   {"status", status_name(r.status)}};
  if (r.status == QueryStatus::labeled) {
    j["label"] = r.label;
    j["annotator"] = r.annotator;
  } else {
    j["label"] = nullptr;
    j["annotator"] = nullptr;
  }
  return j;
}

/// Drops a torn final line left by a crash mid-append.
void trim_partial_tail(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size == 0) return;
  std::ifstream in(path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.back() == '\n') return;
  const auto nl = text.rfind('\n');
  std::filesystem::resize_file(path, nl == std::string::npos ? 0 : nl + 1);
}

void send_json(httplib::Response& res, int code, const json& body) {
  res.status = code;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int code, const std::string& message) {
  send_json(res, code, {{"schema_version", kSchemaVersion}, {"error", message}});
}

}  // namespace

// ---------------------------------------------------------------- store

AnnotationStore::AnnotationStore(std::filesystem::path journal) : path_(std::move(journal)) {
  if (path_.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path_.parent_path(), ec);
  }
  trim_partial_tail(path_);
  replay();
  file_ = std::fopen(path_.c_str(), "ab");
  if (file_ == nullptr) throw DataError("cannot open journal " + path_.string());
}

AnnotationStore::~AnnotationStore() {
  if (file_ != nullptr) std::fclose(file_);
}

void AnnotationStore::replay() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path_.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      if (j.at("schema_version").get<int>() > kSchemaVersion) {
        throw DataError(where + ": newer journal schema");
      }
      const auto type = j.at("type").get<std::string>();
      if (type == "open") {
        if (round_) throw DataError(where + ": round opened while another is open");
        Round r;
        r.status.round = j.at("round").get<std::size_t>();
        r.status.domain = j.at("domain").get<std::string>();
        r.status.cell = j.at("cell").get<std::string>();
        r.status.seed = j.at("seed").get<std::uint64_t>();
        for (const json& q : j.at("queries")) {
          QueryRecord rec;
          rec.sample_id = q.at("sample_id").get<std::int64_t>();
          rec.round = r.status.round;
          rec.domain = r.status.domain;
          rec.features = q.at("features").get<std::vector<double>>();
          r.queries.push_back(std::move(rec));
        }
        r.status.budget = r.status.pending = r.queries.size();
        round_ = std::move(r);
      } else if (type == "label") {
        if (!round_) throw DataError(where + ": label outside a round");
        const auto id = j.at("sample_id").get<std::int64_t>();
        bool found = false;
        for (auto& q : round_->queries) {
          if (q.sample_id != id) continue;
          if (q.status == QueryStatus::labeled) throw DataError(where + ": duplicate label");
          q.status = QueryStatus::labeled;
          q.label = j.at("label").get<int>();
          q.annotator = j.at("annotator").get<std::string>();
          --round_->status.pending;
          ++round_->status.labeled;
          found = true;
        }
        if (!found) throw DataError(where + ": label for unknown id");
      } else if (type == "close") {
        if (!round_ || round_->status.pending != 0) throw DataError(where + ": close of an incomplete round");
        commit_locked();
      } else if (type == "abort") {
        round_.reset();
      } else {
        throw DataError(where + ": unknown record type " + type);
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (round_) round_->status.phase = round_->status.pending == 0 ? "complete" : "awaiting_labels";
}

void AnnotationStore::append(const std::string& line) {
  if (std::fputs((line + "\n").c_str(), file_) < 0 || std::fflush(file_) != 0 || ::fsync(::fileno(file_)) != 0) {
    throw DataError("failed writing journal " + path_.string());
  }
}

void AnnotationStore::open_round(const harness::LabelRequest& request) {
  if (request.features.rows() != request.ids.size()) {
    throw ArgumentError("label request needs one feature row per id");
  }
  std::lock_guard lock(mu_);
  if (round_) throw StateError("a labeling round is already open");
  Round r;
  r.status = {request.round, request.domain, request.cell, request.seed, request.ids.size(),
              request.ids.size(), 0, request.ids.empty() ? "complete" : "awaiting_labels"};
  json queries = json::array();
  for (std::size_t i = 0; i < request.ids.size(); ++i) {
    const auto row = request.features.row(i);
    QueryRecord rec;
    rec.sample_id = request.ids[i];
    rec.round = request.round;
    rec.domain = request.domain;
    rec.features.assign(row.begin(), row.end());
    queries.push_back({{"sample_id", rec.sample_id}, {"features", rec.features}});
    r.queries.push_back(std::move(rec));
  }
  append(json{{"schema_version", kSchemaVersion},
              {"type", "open"},
              {"round", request.round},
              {"domain", request.domain},
              {"cell", request.cell},
              {"seed", request.seed},
              {"queries", queries}}
             .dump());
  round_ = std::move(r);
}

bool AnnotationStore::has_round() const {
  std::lock_guard lock(mu_);
  return round_.has_value();
}

bool AnnotationStore::matches(const harness::LabelRequest& request) const {
  std::lock_guard lock(mu_);
  if (!round_) return false;
  const RoundStatus& s = round_->status;
  if (s.round != request.round || s.domain != request.domain || s.cell != request.cell ||
      s.seed != request.seed || round_->queries.size() != request.ids.size()) {
    return false;
  }
  for (std::size_t i = 0; i < request.ids.size(); ++i) {
    if (round_->queries[i].sample_id != request.ids[i]) return false;
  }
  return true;
}

std::optional<RoundStatus> AnnotationStore::status() const {
  std::lock_guard lock(mu_);
  if (!round_) return std::nullopt;
  return round_->status;
}

std::vector<QueryRecord> AnnotationStore::queries() const {
  std::lock_guard lock(mu_);
  if (!round_) return {};
  return round_->queries;
}

SubmitOutcome AnnotationStore::submit(std::int64_t sample_id, int label, const std::string& annotator) {
  std::lock_guard lock(mu_);
  if (!round_) return {SubmitResult::no_round};
  auto it = std::find_if(round_->queries.begin(), round_->queries.end(),
                         [&](const QueryRecord& q) { return q.sample_id == sample_id; });
  if (it == round_->queries.end()) return {SubmitResult::unknown_id};
  if (it->status == QueryStatus::labeled) return {SubmitResult::duplicate, it->label};
  if (label != 0 && label != 1) return {SubmitResult::invalid_label};
  append(json{{"schema_version", kSchemaVersion},
              {"type", "label"},
              {"sample_id", sample_id},
              {"label", label},
              {"annotator", annotator}}
             .dump());
  it->status = QueryStatus::labeled;
  it->label = label;
  it->annotator = annotator;
  --round_->status.pending;
  ++round_->status.labeled;
  if (round_->status.pending == 0) {
    round_->status.phase = "complete";
    cv_.notify_all();
  }
  return {SubmitResult::accepted, label};
}

bool AnnotationStore::wait_complete(double timeout_seconds) {
  std::unique_lock lock(mu_);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  return cv_.wait_until(lock, deadline, [&] { return !round_ || round_->status.pending == 0; }) &&
         round_.has_value();
}

std::string AnnotationStore::key(std::size_t round, const std::string& domain, const std::string& cell,
                                 std::uint64_t seed) {
  return json{round, domain, cell, seed}.dump();
}

void AnnotationStore::commit_locked() {
  Committed c;
  for (const auto& q : round_->queries) {
    c.ids.push_back(q.sample_id);
    c.labels.push_back(q.label);
  }
  const RoundStatus& s = round_->status;
  committed_[key(s.round, s.domain, s.cell, s.seed)] = std::move(c);
  round_.reset();
}

std::vector<int> AnnotationStore::close_round() {
  std::lock_guard lock(mu_);
  if (!round_) throw StateError("no labeling round to close");
  if (round_->status.pending != 0) throw StateError("labeling round still has pending queries");
  append(json{{"schema_version", kSchemaVersion}, {"type", "close"}}.dump());
  std::vector<int> labels;
  for (const auto& q : round_->queries) labels.push_back(q.label);
  commit_locked();
  return labels;
}

std::optional<std::vector<int>> AnnotationStore::committed(const harness::LabelRequest& request) const {
  std::lock_guard lock(mu_);
  auto it = committed_.find(key(request.round, request.domain, request.cell, request.seed));
  if (it == committed_.end() || it->second.ids != request.ids) return std::nullopt;
  return it->second.labels;
}

void AnnotationStore::abort_round() {
  std::lock_guard lock(mu_);
  if (!round_) return;
  append(json{{"schema_version", kSchemaVersion}, {"type", "abort"}}.dump());
  round_.reset();
  cv_.notify_all();
}

// ---------------------------------------------------------------- JSON

std::string status_json(const RoundStatus& s) {
  return json{{"schema_version", kSchemaVersion},
              {"round", s.round},
              {"domain", s.domain},
              {"cell", s.cell},
              {"seed", s.seed},
              {"budget", s.budget},
              {"pending", s.pending},
              {"labeled", s.labeled},
              {"phase", s.phase}}
      .dump();
}

std::string queries_json(const std::vector<QueryRecord>& q) {
  json list = json::array();
  for (const auto& r : q) list.push_back(record_json(r));
  return json{{"schema_version", kSchemaVersion}, {"queries", list}}.dump();
}

// ---------------------------------------------------------------- server

AnnotationServer::AnnotationServer(AnnotationStore& store)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/rounds/current", [this](const httplib::Request&, httplib::Response& res) {
    auto s = store_.status();
    if (!s) return send_error(res, 404, "no active round");
    res.set_content(status_json(*s), "application/json");
  });

  srv.Get("/rounds/current/queries", [this](const httplib::Request&, httplib::Response& res) {
    if (!store_.has_round()) return send_error(res, 404, "no active round");
    res.set_content(queries_json(store_.queries()), "application/json");
  });

  srv.Post("/labels", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("sample_id") || !body.contains("label") ||
        !body["sample_id"].is_number_integer()) {
      return send_error(res, 400, "expected {sample_id, label, annotator}");
    }
    const json& lab = body["label"];
    const int label = lab.is_number_integer() ? lab.get<int>() : -1;
    const std::string annotator =
        body.contains("annotator") && body["annotator"].is_string() ? body["annotator"].get<std::string>() : "";
    SubmitOutcome out;
    try {
      out = store_.submit(body["sample_id"].get<std::int64_t>(), label, annotator);
    } catch (const Error& e) {
      return send_error(res, 500, e.what());
    }
    const json id = body["sample_id"];
    switch (out.result) {
      case SubmitResult::accepted: {
        json ack = {{"schema_version", kSchemaVersion}, {"sample_id", id}, {"label", out.stored_label}};
        if (auto s = store_.status()) ack["pending"] = s->pending;
        return send_json(res, 200, ack);
      }
      case SubmitResult::duplicate:
        return send_json(res, 409, {{"schema_version", kSchemaVersion},
                                    {"error", "sample already labeled"},
                                    {"sample_id", id},
                                    {"stored_label", out.stored_label}});
      case SubmitResult::unknown_id:
        return send_error(res, 422, "sample is not queried in the current round");
      case SubmitResult::invalid_label:
        return send_error(res, 422, "label must be 0 or 1");
      case SubmitResult::no_round:
        return send_error(res, 404, "no active round");
    }
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  if (thread_.joinable()) throw StateError("server already running");
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw StateError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void AnnotationServer::stop() {
  if (!thread_.joinable()) return;
  server_->stop();
  thread_.join();
}

// ---------------------------------------------------------------- labeler

ServiceLabeler::ServiceLabeler(AnnotationStore& store, double timeout_seconds)
    : store_(store), timeout_(timeout_seconds) {}

std::vector<int> ServiceLabeler::label(const harness::LabelRequest& request) {
  std::lock_guard lock(serial_);
  if (auto done = store_.committed(request)) return *done;
  if (!store_.matches(request)) {
    if (store_.has_round()) store_.abort_round();
    store_.open_round(request);
  }
  if (!store_.wait_complete(timeout_)) {
    store_.abort_round();
    throw harness::LabelerTimeout("no labels for round " + std::to_string(request.round) + " of " +
                                  request.domain + " within " + std::to_string(timeout_) + " s");
  }
  return store_.close_round();
}

}  // namespace sslada::annotate
