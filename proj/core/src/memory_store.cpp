#include <algorithm>
#include <map>
#include <mutex>

#include "casekit/store.hpp"
#include "store_internal.hpp"

namespace casekit {
namespace {

class MemoryStore final : public Store {
 public:
  explicit MemoryStore(StoreOptions options) : options_(std::move(options)) {}

  void create_session(const Session& session) override {
    std::lock_guard lock(mutex_);
    if (!sessions_.emplace(session.session_id, session).second) {
      throw Error(ErrorCode::index_conflict, "session exists: " + session.session_id);
    }
    if (!session.is_active()) enqueue(session.session_id, session.updated_at);
  }

  std::optional<Session> load_session(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
  }

  void append_turn(const std::string& id, const Turn& turn) override {
    append_turns(id, std::span<const Turn>(&turn, 1), std::nullopt, turn.timestamp);
  }

  void append_turns(const std::string& id, std::span<const Turn> turns,
                    std::optional<ConclusionReason> conclude, TimePoint updated_at) override {
    std::lock_guard lock(mutex_);
    Session& s = must_find(id);
    Session staged = s;
    for (const auto& t : turns) {
      detail::check_append(staged, t);
      staged.turns.push_back(t);
    }
    staged.updated_at = updated_at;
    if (conclude) {
      staged.state = SessionState::concluded;
      staged.reason = conclude;
    }
    s = std::move(staged);
    if (conclude) enqueue(id, updated_at);
  }

  bool conclude_session(const std::string& id, ConclusionReason reason, TimePoint at) override {
    std::lock_guard lock(mutex_);
    Session& s = must_find(id);
    if (!s.is_active()) return false;
    s.state = SessionState::concluded;
    s.reason = reason;
    s.updated_at = at;
    enqueue(id, at);
    return true;
  }

  std::vector<std::string> list_idle_sessions(TimePoint cutoff) const override {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, s] : sessions_) {
      if (s.is_active() && s.updated_at < cutoff) out.push_back(id);
    }
    return out;
  }

  std::vector<Session> list_sessions(std::optional<TimePoint> since,
                                     std::optional<TimePoint> until) const override {
    std::lock_guard lock(mutex_);
    std::vector<Session> out;
    for (const auto& [id, s] : sessions_) {
      if (since && s.created_at < *since) continue;
      if (until && s.created_at >= *until) continue;
      out.push_back(s);
    }
    std::sort(out.begin(), out.end(), [](const Session& a, const Session& b) {
      return std::tie(a.created_at, a.session_id) < std::tie(b.created_at, b.session_id);
    });
    return out;
  }

  std::vector<std::string> list_extraction_candidates(std::size_t limit) const override {
    std::lock_guard lock(mutex_);
    std::vector<const ExtractionStatus*> eligible;
    const TimePoint now = options_.now();
    for (const auto& [id, st] : queue_) {
      if (is_eligible(st, now)) eligible.push_back(&st);
    }
    std::sort(eligible.begin(), eligible.end(), [](const auto* a, const auto* b) {
      return std::tie(a->queued_at, a->session_id) < std::tie(b->queued_at, b->session_id);
    });
    std::vector<std::string> out;
    for (const auto* st : eligible) {
      if (out.size() >= limit) break;
      out.push_back(st->session_id);
    }
    return out;
  }

  bool claim_for_extraction(const std::string& id) override {
    std::lock_guard lock(mutex_);
    auto it = queue_.find(id);
    const TimePoint now = options_.now();
    if (it == queue_.end() || !is_eligible(it->second, now)) return false;
    it->second.state = ExtractionState::claimed;
    claimed_at_[id] = now;
    return true;
  }

  std::string put_intelligence(const std::string& id, const ScamReport& report,
                               int attempt) override {
    std::lock_guard lock(mutex_);
    const Session& s = must_find(id);
    if (s.is_active()) throw Error(ErrorCode::session_active, "session " + id + " is active");
    const TimePoint now = options_.now();
    const std::string report_id = report_id_for(id);
    auto it = intelligence_.find(id);
    if (it == intelligence_.end()) {
      intelligence_.emplace(id, IntelligenceRecord{report.schema_version, report_id, id, now, report});
    } else if (!(it->second.report == report)) {
      it->second.report = report;
      it->second.schema_version = report.schema_version;
      it->second.written_at = now;
    }
    ExtractionStatus& st = queue_[id];
    st.session_id = id;
    st.state = ExtractionState::extracted;
    st.attempt = attempt;
    st.report_id = report_id;
    st.extracted_at = now;
    st.last_error.clear();
    return report_id;
  }

  void mark_extraction_failed(const std::string& id, int attempt, const std::string& error) override {
    std::lock_guard lock(mutex_);
    auto it = queue_.find(id);
    if (it == queue_.end()) throw Error(ErrorCode::session_not_found, "not queued: " + id);
    it->second.state = ExtractionState::failed;
    it->second.attempt = attempt;
    it->second.last_error = error;
  }

  std::optional<ExtractionStatus> extraction_status(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    auto it = queue_.find(id);
    if (it == queue_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t requeue_failed() override {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (auto& [id, st] : queue_) {
      if (st.state == ExtractionState::failed && st.attempt >= options_.max_attempts) {
        st.state = ExtractionState::pending;
        st.attempt = 0;
        ++n;
      }
    }
    return n;
  }

  std::vector<IntelligenceRecord> export_intelligence(const ExportFilter& filter) const override {
    std::lock_guard lock(mutex_);
    std::vector<IntelligenceRecord> out;
    for (const auto& [id, rec] : intelligence_) {
      if (filter.start && rec.written_at < *filter.start) continue;
      if (filter.end && rec.written_at >= *filter.end) continue;
      if (filter.mo && rec.report.possible_scam_mo != *filter.mo) continue;
      out.push_back(rec);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return std::tie(a.written_at, a.report_id) < std::tie(b.written_at, b.report_id);
    });
    return out;
  }

  std::optional<IntelligenceRecord> intelligence_for(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    auto it = intelligence_.find(id);
    if (it == intelligence_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t purge_before(TimePoint cutoff) override {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (!it->second.is_active() && it->second.updated_at < cutoff) {
        queue_.erase(it->first);
        intelligence_.erase(it->first);
        claimed_at_.erase(it->first);
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  const StoreOptions& options() const override { return options_; }

 private:
  Session& must_find(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::session_not_found, "no session " + id);
    return it->second;
  }

  void enqueue(const std::string& id, TimePoint at) {
    if (queue_.count(id)) return;
    ExtractionStatus st;
    st.session_id = id;
    st.queued_at = at;
    queue_.emplace(id, std::move(st));
  }

  bool is_eligible(const ExtractionStatus& st, TimePoint now) const {
    switch (st.state) {
      case ExtractionState::pending: return true;
      case ExtractionState::failed: return st.attempt < options_.max_attempts;
      case ExtractionState::claimed: {
        auto it = claimed_at_.find(st.session_id);
        return it != claimed_at_.end() && it->second + options_.claim_lease < now;
      }
      case ExtractionState::extracted: return false;
    }
    return false;
  }

  StoreOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, ExtractionStatus> queue_;
  std::map<std::string, TimePoint> claimed_at_;
  std::map<std::string, IntelligenceRecord> intelligence_;
};

}  // namespace

std::unique_ptr<Store> make_memory_store(StoreOptions options) {
  return std::make_unique<MemoryStore>(std::move(options));
}

}  // namespace casekit
