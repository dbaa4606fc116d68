#include <limits>
#include <mutex>

#include <sqlite3.h>
#include <spdlog/spdlog.h>

#include "casekit/store.hpp"
#include "store_internal.hpp"

namespace casekit {
namespace {

// Schema (all timestamps are milliseconds since the Unix epoch):
//   sessions(session_id PK, state, reason, created_at, updated_at,
//            config_version, initiation_ref)
//   turns(session_id, idx, speaker, text, ts, verdict_json, decision_source)
//     PK (session_id, idx); rows are never updated.
//   extraction(session_id PK, state, attempt, report_id, extracted_at,
//              last_error, queued_at, claimed_at)
//   intelligence(report_id PK, session_id UNIQUE, schema_version, mo,
//                payload_json, written_at)
constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS sessions (
  session_id     TEXT PRIMARY KEY,
  state          TEXT NOT NULL CHECK (state IN ('active', 'concluded')),
  reason         TEXT,
  created_at     INTEGER NOT NULL,
  updated_at     INTEGER NOT NULL,
  config_version TEXT NOT NULL,
  initiation_ref TEXT
);
CREATE TABLE IF NOT EXISTS turns (
  session_id      TEXT NOT NULL REFERENCES sessions(session_id),
  idx             INTEGER NOT NULL,
  speaker         TEXT NOT NULL CHECK (speaker IN ('agent', 'user')),
  text            TEXT NOT NULL,
  ts              INTEGER NOT NULL,
  verdict_json    TEXT,
  decision_source TEXT,
  PRIMARY KEY (session_id, idx)
);
CREATE TRIGGER IF NOT EXISTS turns_append_only BEFORE UPDATE ON turns
BEGIN
  SELECT RAISE(ABORT, 'turns are append-only');
END;
CREATE TRIGGER IF NOT EXISTS sessions_no_reopen BEFORE UPDATE OF state ON sessions
  WHEN OLD.state = 'concluded' AND NEW.state <> 'concluded'
BEGIN
  SELECT RAISE(ABORT, 'concluded sessions cannot be reopened');
END;
CREATE TABLE IF NOT EXISTS extraction (
  session_id   TEXT PRIMARY KEY REFERENCES sessions(session_id),
  state        TEXT NOT NULL,
  attempt      INTEGER NOT NULL DEFAULT 0,
  report_id    TEXT,
  extracted_at INTEGER,
  last_error   TEXT NOT NULL DEFAULT '',
  queued_at    INTEGER NOT NULL,
  claimed_at   INTEGER
);
CREATE INDEX IF NOT EXISTS extraction_queue ON extraction(state, queued_at, session_id);
CREATE TABLE IF NOT EXISTS intelligence (
  report_id      TEXT PRIMARY KEY,
  session_id     TEXT NOT NULL UNIQUE REFERENCES sessions(session_id),
  schema_version TEXT NOT NULL,
  mo             TEXT NOT NULL,
  payload_json   TEXT NOT NULL,
  written_at     INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS intelligence_written ON intelligence(written_at, report_id);
)sql";

constexpr const char* kEligible = R"sql(
  (state = 'pending'
   OR (state = 'failed' AND attempt < :max_attempts)
   OR (state = 'claimed' AND claimed_at < :lease_cutoff))
)sql";

[[noreturn]] void fail(sqlite3* db, const std::string& what) {
  throw Error(ErrorCode::store_unavailable, what + ": " + (db ? sqlite3_errmsg(db) : "no db"));
}

class Statement {
 public:
  Statement(sqlite3* db, const std::string& sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt_, nullptr) != SQLITE_OK) {
      fail(db, "prepare failed");
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, const std::optional<std::string>& v) {
    if (!v) {
      check(sqlite3_bind_null(stmt_, i));
      return *this;
    }
    return bind(i, *v);
  }
  Statement& bind(const char* name, std::int64_t v) { return bind(index_of(name), v); }
  Statement& bind(const char* name, const std::string& v) { return bind(index_of(name), v); }

  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    if ((rc & 0xff) == SQLITE_CONSTRAINT) {
      throw Error(ErrorCode::index_conflict, std::string("constraint: ") + sqlite3_errmsg(db_));
    }
    fail(db_, "step failed");
  }
  void run() {
    while (step()) {
    }
  }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p),
                           static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
             : std::string{};
  }
  std::optional<std::string> opt_text(int col) const {
    if (sqlite3_column_type(stmt_, col) == SQLITE_NULL) return std::nullopt;
    return text(col);
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

 private:
  int index_of(const char* name) {
    const int i = sqlite3_bind_parameter_index(stmt_, name);
    if (i == 0) fail(db_, std::string("no parameter ") + name);
    return i;
  }
  void check(int rc) {
    if (rc != SQLITE_OK) fail(db_, "bind failed");
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

class SqliteStore final : public Store {
 public:
  SqliteStore(const std::filesystem::path& path, StoreOptions options)
      : options_(std::move(options)) {
    const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw Error(ErrorCode::store_unavailable, "cannot open store " + path.string() + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA synchronous=FULL");
    exec("PRAGMA foreign_keys=ON");
    exec(kSchema);
  }

  ~SqliteStore() override { sqlite3_close(db_); }

  void create_session(const Session& s) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    {
      Statement exists(db_, "SELECT 1 FROM sessions WHERE session_id = ?");
      exists.bind(1, s.session_id);
      if (exists.step()) throw Error(ErrorCode::index_conflict, "session exists: " + s.session_id);
    }
    Statement ins(db_,
                  "INSERT INTO sessions (session_id, state, reason, created_at, updated_at, "
                  "config_version, initiation_ref) VALUES (?, ?, ?, ?, ?, ?, ?)");
    ins.bind(1, s.session_id)
        .bind(2, std::string(to_string(s.state)))
        .bind(3, s.reason ? std::optional<std::string>(std::string(to_string(*s.reason)))
                          : std::nullopt)
        .bind(4, to_epoch_ms(s.created_at))
        .bind(5, to_epoch_ms(s.updated_at))
        .bind(6, s.config_version)
        .bind(7, s.initiation_ref);
    ins.run();
    for (const auto& t : s.turns) insert_turn(s.session_id, t);
    if (!s.is_active()) enqueue(s.session_id, s.updated_at);
    tx.commit();
  }

  std::optional<Session> load_session(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    return load_locked(id);
  }

  void append_turn(const std::string& id, const Turn& turn) override {
    append_turns(id, std::span<const Turn>(&turn, 1), std::nullopt, turn.timestamp);
  }

  void append_turns(const std::string& id, std::span<const Turn> turns,
                    std::optional<ConclusionReason> conclude, TimePoint updated_at) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    auto current = load_locked(id);
    if (!current) throw Error(ErrorCode::session_not_found, "no session " + id);
    for (const auto& t : turns) {
      detail::check_append(*current, t);
      insert_turn(id, t);
      current->turns.push_back(t);
    }
    if (conclude) {
      Statement up(db_,
                   "UPDATE sessions SET state = 'concluded', reason = ?, updated_at = ? "
                   "WHERE session_id = ?");
      up.bind(1, std::string(to_string(*conclude))).bind(2, to_epoch_ms(updated_at)).bind(3, id);
      up.run();
      enqueue(id, updated_at);
    } else {
      touch(id, updated_at);
    }
    tx.commit();
  }

  bool conclude_session(const std::string& id, ConclusionReason reason, TimePoint at) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    Statement st(db_, "SELECT state FROM sessions WHERE session_id = ?");
    st.bind(1, id);
    if (!st.step()) throw Error(ErrorCode::session_not_found, "no session " + id);
    if (st.text(0) != "active") return false;
    Statement up(db_,
                 "UPDATE sessions SET state = 'concluded', reason = ?, updated_at = ? "
                 "WHERE session_id = ? AND state = 'active'");
    up.bind(1, std::string(to_string(reason))).bind(2, to_epoch_ms(at)).bind(3, id);
    up.run();
    enqueue(id, at);
    tx.commit();
    return true;
  }

  std::vector<std::string> list_idle_sessions(TimePoint cutoff) const override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "SELECT session_id FROM sessions WHERE state = 'active' AND updated_at < ? "
                 "ORDER BY updated_at, session_id");
    st.bind(1, to_epoch_ms(cutoff));
    std::vector<std::string> out;
    while (st.step()) out.push_back(st.text(0));
    return out;
  }

  std::vector<Session> list_sessions(std::optional<TimePoint> since,
                                     std::optional<TimePoint> until) const override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "SELECT session_id FROM sessions WHERE created_at >= ? AND created_at < ? "
                 "ORDER BY created_at, session_id");
    st.bind(1, since ? to_epoch_ms(*since) : std::numeric_limits<std::int64_t>::min())
        .bind(2, until ? to_epoch_ms(*until) : std::numeric_limits<std::int64_t>::max());
    std::vector<std::string> ids;
    while (st.step()) ids.push_back(st.text(0));
    std::vector<Session> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(*load_locked(id));
    return out;
  }

  std::vector<std::string> list_extraction_candidates(std::size_t limit) const override {
    std::lock_guard lock(mutex_);
    Statement st(db_, std::string("SELECT session_id FROM extraction WHERE ") + kEligible +
                          " ORDER BY queued_at, session_id LIMIT :limit");
    bind_eligibility(st);
    st.bind(":limit", static_cast<std::int64_t>(limit));
    std::vector<std::string> out;
    while (st.step()) out.push_back(st.text(0));
    return out;
  }

  bool claim_for_extraction(const std::string& id) override {
    std::lock_guard lock(mutex_);
    Statement st(db_, std::string("UPDATE extraction SET state = 'claimed', claimed_at = :now "
                                  "WHERE session_id = :id AND ") +
                          kEligible);
    bind_eligibility(st);
    st.bind(":now", to_epoch_ms(options_.now()));
    st.bind(":id", id);
    st.run();
    return sqlite3_changes(db_) == 1;
  }

  std::string put_intelligence(const std::string& id, const ScamReport& report,
                               int attempt) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    Statement st(db_, "SELECT state FROM sessions WHERE session_id = ?");
    st.bind(1, id);
    if (!st.step()) throw Error(ErrorCode::session_not_found, "no session " + id);
    if (st.text(0) == "active") throw Error(ErrorCode::session_active, "session " + id + " is active");

    const std::string report_id = report_id_for(id);
    const std::int64_t now = to_epoch_ms(options_.now());
    Statement up(db_, R"sql(
      INSERT INTO intelligence (report_id, session_id, schema_version, mo, payload_json, written_at)
      VALUES (?1, ?2, ?3, ?4, ?5, ?6)
      ON CONFLICT(session_id) DO UPDATE SET
        written_at = CASE WHEN payload_json = excluded.payload_json
                          THEN written_at ELSE excluded.written_at END,
        schema_version = excluded.schema_version,
        mo = excluded.mo,
        payload_json = excluded.payload_json
    )sql");
    up.bind(1, report_id)
        .bind(2, id)
        .bind(3, report.schema_version)
        .bind(4, report.possible_scam_mo)
        .bind(5, to_json(report).dump())
        .bind(6, now);
    up.run();
    enqueue(id, from_epoch_ms(now));
    Statement mark(db_,
                   "UPDATE extraction SET state = 'extracted', attempt = ?, report_id = ?, "
                   "extracted_at = ?, last_error = '' WHERE session_id = ?");
    mark.bind(1, static_cast<std::int64_t>(attempt)).bind(2, report_id).bind(3, now).bind(4, id);
    mark.run();
    tx.commit();
    return report_id;
  }

  void mark_extraction_failed(const std::string& id, int attempt, const std::string& error) override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "UPDATE extraction SET state = 'failed', attempt = ?, last_error = ? "
                 "WHERE session_id = ?");
    st.bind(1, static_cast<std::int64_t>(attempt)).bind(2, error).bind(3, id);
    st.run();
    if (sqlite3_changes(db_) != 1) throw Error(ErrorCode::session_not_found, "not queued: " + id);
  }

  std::optional<ExtractionStatus> extraction_status(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "SELECT state, attempt, report_id, extracted_at, last_error, queued_at "
                 "FROM extraction WHERE session_id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    ExtractionStatus out;
    out.session_id = id;
    const std::string state = st.text(0);
    out.state = state == "pending"     ? ExtractionState::pending
                : state == "claimed"   ? ExtractionState::claimed
                : state == "extracted" ? ExtractionState::extracted
                                       : ExtractionState::failed;
    out.attempt = static_cast<int>(st.integer(1));
    out.report_id = st.opt_text(2);
    if (!st.is_null(3)) out.extracted_at = from_epoch_ms(st.integer(3));
    out.last_error = st.text(4);
    out.queued_at = from_epoch_ms(st.integer(5));
    return out;
  }

  std::size_t requeue_failed() override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "UPDATE extraction SET state = 'pending', attempt = 0 "
                 "WHERE state = 'failed' AND attempt >= ?");
    st.bind(1, static_cast<std::int64_t>(options_.max_attempts));
    st.run();
    return static_cast<std::size_t>(sqlite3_changes(db_));
  }

  std::vector<IntelligenceRecord> export_intelligence(const ExportFilter& filter) const override {
    std::lock_guard lock(mutex_);
    std::string sql =
        "SELECT report_id, session_id, schema_version, payload_json, written_at FROM intelligence "
        "WHERE written_at >= ?1 AND written_at < ?2";
    if (filter.mo) sql += " AND mo = ?3";
    sql += " ORDER BY written_at, report_id";
    Statement st(db_, sql);
    st.bind(1, filter.start ? to_epoch_ms(*filter.start) : std::numeric_limits<std::int64_t>::min())
        .bind(2, filter.end ? to_epoch_ms(*filter.end) : std::numeric_limits<std::int64_t>::max());
    if (filter.mo) st.bind(3, *filter.mo);
    std::vector<IntelligenceRecord> out;
    while (st.step()) out.push_back(read_record(st));
    return out;
  }

  std::optional<IntelligenceRecord> intelligence_for(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    Statement st(db_,
                 "SELECT report_id, session_id, schema_version, payload_json, written_at "
                 "FROM intelligence WHERE session_id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    return read_record(st);
  }

  std::size_t purge_before(TimePoint cutoff) override {
    std::lock_guard lock(mutex_);
    Transaction tx(*this);
    const std::string victims =
        "(SELECT session_id FROM sessions WHERE state = 'concluded' AND updated_at < ?)";
    for (const char* table : {"turns", "extraction", "intelligence"}) {
      Statement del(db_, std::string("DELETE FROM ") + table + " WHERE session_id IN " + victims);
      del.bind(1, to_epoch_ms(cutoff));
      del.run();
    }
    Statement del(db_, "DELETE FROM sessions WHERE state = 'concluded' AND updated_at < ?");
    del.bind(1, to_epoch_ms(cutoff));
    del.run();
    const auto n = static_cast<std::size_t>(sqlite3_changes(db_));
    tx.commit();
    return n;
  }

  const StoreOptions& options() const override { return options_; }

 private:
  class Transaction {
   public:
    explicit Transaction(SqliteStore& store) : store_(store) { store_.exec("BEGIN IMMEDIATE"); }
    ~Transaction() {
      if (!done_) {
        if (sqlite3_exec(store_.db_, "ROLLBACK", nullptr, nullptr, nullptr) != SQLITE_OK) {
          spdlog::error("rollback failed: {}", sqlite3_errmsg(store_.db_));
        }
      }
    }
    void commit() {
      store_.exec("COMMIT");
      done_ = true;
    }

   private:
    SqliteStore& store_;
    bool done_ = false;
  };

  void exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw Error(ErrorCode::store_unavailable, std::string("sqlite: ") + msg);
    }
  }

  void bind_eligibility(Statement& st) const {
    st.bind(":max_attempts", static_cast<std::int64_t>(options_.max_attempts));
    st.bind(":lease_cutoff", to_epoch_ms(options_.now() - options_.claim_lease));
  }

  void insert_turn(const std::string& id, const Turn& t) {
    Statement ins(db_,
                  "INSERT INTO turns (session_id, idx, speaker, text, ts, verdict_json, "
                  "decision_source) VALUES (?, ?, ?, ?, ?, ?, ?)");
    ins.bind(1, id)
        .bind(2, static_cast<std::int64_t>(t.index))
        .bind(3, std::string(to_string(t.speaker)))
        .bind(4, t.text)
        .bind(5, to_epoch_ms(t.timestamp))
        .bind(6, t.safety_verdict ? std::optional<std::string>(to_json(*t.safety_verdict).dump())
                                  : std::nullopt)
        .bind(7, t.decision_source
                     ? std::optional<std::string>(std::string(to_string(*t.decision_source)))
                     : std::nullopt);
    ins.run();
  }

  void touch(const std::string& id, TimePoint at) {
    Statement up(db_, "UPDATE sessions SET updated_at = ? WHERE session_id = ?");
    up.bind(1, to_epoch_ms(at)).bind(2, id);
    up.run();
  }

  void enqueue(const std::string& id, TimePoint at) {
    Statement ins(db_,
                  "INSERT OR IGNORE INTO extraction (session_id, state, queued_at) "
                  "VALUES (?, 'pending', ?)");
    ins.bind(1, id).bind(2, to_epoch_ms(at));
    ins.run();
  }

  std::optional<Session> load_locked(const std::string& id) const {
    Statement st(db_,
                 "SELECT state, reason, created_at, updated_at, config_version, initiation_ref "
                 "FROM sessions WHERE session_id = ?");
    st.bind(1, id);
    if (!st.step()) return std::nullopt;
    Session s;
    s.session_id = id;
    s.state = st.text(0) == "active" ? SessionState::active : SessionState::concluded;
    if (auto r = st.opt_text(1)) s.reason = conclusion_reason_from_string(*r);
    s.created_at = from_epoch_ms(st.integer(2));
    s.updated_at = from_epoch_ms(st.integer(3));
    s.config_version = st.text(4);
    s.initiation_ref = st.opt_text(5);

    Statement tt(db_,
                 "SELECT idx, speaker, text, ts, verdict_json, decision_source FROM turns "
                 "WHERE session_id = ? ORDER BY idx");
    tt.bind(1, id);
    while (tt.step()) {
      Turn t;
      t.index = static_cast<std::size_t>(tt.integer(0));
      t.speaker = tt.text(1) == "agent" ? Speaker::agent : Speaker::user;
      t.text = tt.text(2);
      t.timestamp = from_epoch_ms(tt.integer(3));
      if (auto v = tt.opt_text(4)) t.safety_verdict = verdict_from_json(Json::parse(*v));
      if (auto d = tt.opt_text(5)) t.decision_source = decision_source_from_string(*d);
      s.turns.push_back(std::move(t));
    }
    return s;
  }

  static IntelligenceRecord read_record(const Statement& st) {
    IntelligenceRecord rec;
    rec.report_id = st.text(0);
    rec.session_id = st.text(1);
    rec.schema_version = st.text(2);
    rec.report = report_from_json(OrderedJson::parse(st.text(3)));
    rec.written_at = from_epoch_ms(st.integer(4));
    return rec;
  }

  StoreOptions options_;
  sqlite3* db_ = nullptr;
  mutable std::mutex mutex_;
};

}  // namespace

std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& path, StoreOptions options) {
  return std::make_unique<SqliteStore>(path, std::move(options));
}

}  // namespace casekit
