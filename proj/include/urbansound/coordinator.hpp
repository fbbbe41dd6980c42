// Copyright 2026 The urbansound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Central ingestion: validation, an append-only raw store, and period rollups.
//
// Layout under the store directory:
//
//     raw/<node_id>.jsonl   one StoredRecord per line, append only
//     agg/<period>.jsonl    hour|day|week|month aggregates, rewritten per snapshot
//
// Aggregates are recomputed from every raw record of a touched
// (node, class, period) key, so they depend only on the raw store.

#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "urbansound/common.hpp"
#include "urbansound/metadata.hpp"
#include "urbansound/net.hpp"
#include "urbansound/taxonomy.hpp"

namespace urbansound::coordinator {

enum class PeriodKind { Hour, Day, Week, Month };
inline constexpr std::array<PeriodKind, 4> kPeriodKinds{PeriodKind::Hour, PeriodKind::Day, PeriodKind::Week,
                                                        PeriodKind::Month};

inline std::string_view period_name(PeriodKind k) {
  switch (k) {
    case PeriodKind::Hour: return "hour";
    case PeriodKind::Day: return "day";
    case PeriodKind::Week: return "week";
    case PeriodKind::Month: return "month";
  }
  return "?";
}

inline PeriodKind parse_period(std::string_view s) {
  for (auto k : kPeriodKinds)
    if (period_name(k) == s) return k;
  throw ConfigError("unknown period kind: " + std::string(s));
}

/// Start of the UTC period containing `t`; weeks start on Monday.
inline Timestamp period_start(PeriodKind kind, Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  switch (kind) {
    case PeriodKind::Hour: return floor<hours>(t);
    case PeriodKind::Day: return day;
    case PeriodKind::Week: {
      const weekday wd{day};
      return day - days{(wd.c_encoding() + 6) % 7};
    }
    case PeriodKind::Month: {
      const year_month_day ymd{day};
      return sys_days{ymd.year() / ymd.month() / 1};
    }
  }
  return t;
}

struct StoredRecord {
  MetadataRecord record;
  std::int64_t ingest_seq = 0;
  Timestamp received_at{};
};

inline nlohmann::ordered_json to_json(const StoredRecord& s) {
  auto j = to_json(s.record);
  j["ingest_seq"] = s.ingest_seq;
  j["received_at"] = format_rfc3339(s.received_at);
  return j;
}

inline StoredRecord stored_from_json(const nlohmann::json& j) {
  StoredRecord s;
  auto rec = j;
  s.ingest_seq = rec.at("ingest_seq").get<std::int64_t>();
  const auto received = parse_rfc3339(rec.at("received_at").get<std::string>());
  if (!received) throw DataError("bad received_at");
  s.received_at = *received;
  rec.erase("ingest_seq");
  rec.erase("received_at");
  s.record = parse_record(rec.dump(), ValidationRules{1});
  return s;
}

struct AggregateRecord {
  std::string node_id;
  int class_index = 0;
  PeriodKind period_kind = PeriodKind::Hour;
  Timestamp period_start{};
  std::int64_t count = 0;
  double avg_spl = 0.0;
  double min_spl = 0.0;
  double max_spl = 0.0;
  std::optional<double> avg_doa;

  bool operator==(const AggregateRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const AggregateRecord& a) {
  nlohmann::ordered_json j;
  j["node_id"] = a.node_id;
  j["class_index"] = a.class_index;
  j["period_kind"] = std::string(period_name(a.period_kind));
  j["period_start"] = format_rfc3339(a.period_start);
  j["count"] = a.count;
  j["avg_spl"] = a.avg_spl;
  j["min_spl"] = a.min_spl;
  j["max_spl"] = a.max_spl;
  j["avg_doa"] = a.avg_doa ? nlohmann::ordered_json(*a.avg_doa) : nlohmann::ordered_json(nullptr);
  return j;
}

inline AggregateRecord aggregate_from_json(const nlohmann::json& j) {
  AggregateRecord a;
  a.node_id = j.at("node_id").get<std::string>();
  a.class_index = j.at("class_index").get<int>();
  a.period_kind = parse_period(j.at("period_kind").get<std::string>());
  const auto ts = parse_rfc3339(j.at("period_start").get<std::string>());
  if (!ts) throw DataError("bad period_start");
  a.period_start = *ts;
  a.count = j.at("count").get<std::int64_t>();
  a.avg_spl = j.at("avg_spl").get<double>();
  a.min_spl = j.at("min_spl").get<double>();
  a.max_spl = j.at("max_spl").get<double>();
  if (!j.at("avg_doa").is_null()) a.avg_doa = j.at("avg_doa").get<double>();
  return a;
}

/// Aggregate of records already known to share one (node, class, period) key; plain arithmetic means.
inline AggregateRecord aggregate(std::span<const StoredRecord* const> group, PeriodKind kind) {
  if (group.empty()) throw DataError("empty aggregate group");
  AggregateRecord a;
  a.node_id = group.front()->record.node_id;
  a.class_index = group.front()->record.class_index;
  a.period_kind = kind;
  a.period_start = period_start(kind, group.front()->record.timestamp);
  a.count = static_cast<std::int64_t>(group.size());
  a.min_spl = a.max_spl = group.front()->record.spl;
  double spl_sum = 0.0, doa_sum = 0.0;
  std::int64_t doa_n = 0;
  for (const auto* s : group) {
    spl_sum += s->record.spl;
    a.min_spl = std::min(a.min_spl, s->record.spl);
    a.max_spl = std::max(a.max_spl, s->record.spl);
    if (s->record.azimuth) {
      doa_sum += *s->record.azimuth;
      ++doa_n;
    }
  }
  a.avg_spl = std::clamp(spl_sum / static_cast<double>(a.count), a.min_spl, a.max_spl);
  if (doa_n > 0) a.avg_doa = doa_sum / static_cast<double>(doa_n);
  return a;
}

struct AggregateKey {
  PeriodKind kind;
  Timestamp start;
  std::string node_id;
  int class_index;

  auto operator<=>(const AggregateKey&) const = default;
};

inline AggregateKey key_of(const MetadataRecord& r, PeriodKind kind) {
  return {kind, period_start(kind, r.timestamp), r.node_id, r.class_index};
}

/// Scan-and-group over all records, for every period kind.
inline std::map<AggregateKey, AggregateRecord> aggregate_all(const std::vector<StoredRecord>& records) {
  std::map<AggregateKey, std::vector<const StoredRecord*>> groups;
  for (const auto& s : records)
    for (auto kind : kPeriodKinds) groups[key_of(s.record, kind)].push_back(&s);
  std::map<AggregateKey, AggregateRecord> out;
  for (auto& [key, members] : groups) out.emplace(key, aggregate(members, key.kind));
  return out;
}

struct AggregateQuery {
  PeriodKind kind = PeriodKind::Hour;
  std::optional<Timestamp> from;  // inclusive, compared with period_start
  std::optional<Timestamp> to;    // exclusive
  std::optional<std::string> node_id;
  std::optional<int> class_index;
};

struct IngestResult {
  bool accepted = false;
  bool duplicate = false;
  std::int64_t seq = 0;
  std::string reason;

  std::string ack() const { return accepted ? "ok " + std::to_string(seq) : "err " + reason; }
};

struct StoreConfig {
  std::filesystem::path dir;
  ValidationRules rules{};
  std::chrono::hours max_raw_range{24};
};

class Store {
 public:
  explicit Store(StoreConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dir.empty()) throw ConfigError("store directory is required");
    std::filesystem::create_directories(cfg_.dir / "raw");
    std::filesystem::create_directories(cfg_.dir / "agg");
    load();
  }
  ~Store() {
    for (auto& [node, fd] : files_) ::close(fd);
  }
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const StoreConfig& config() const { return cfg_; }

  IngestResult ingest(std::string_view line, Timestamp now = now_utc()) {
    IngestResult res;
    MetadataRecord rec;
    try {
      rec = parse_record(line, cfg_.rules);
    } catch (const ProtocolError& e) {
      res.reason = e.what();
      ++rejected_;
      return res;
    }
    std::unique_lock lock(mutex_);
    const auto id = identity(rec);
    if (const auto it = seen_.find(id); it != seen_.end()) {
      res.accepted = true;
      res.duplicate = true;
      res.seq = it->second;
      ++duplicates_;
      return res;
    }
    StoredRecord s{std::move(rec), next_seq_, std::chrono::floor<std::chrono::seconds>(now)};
    append(s);
    ++next_seq_;
    seen_.emplace(id, s.ingest_seq);
    for (auto kind : kPeriodKinds) dirty_.insert(key_of(s.record, kind));
    res.accepted = true;
    res.seq = s.ingest_seq;
    records_.push_back(std::move(s));
    return res;
  }

  /// Recomputes aggregates for keys touched since the last snapshot and rewrites the
  /// aggregate files. Returns the number of keys recomputed; zero means nothing was written.
  std::size_t snapshot_aggregate() {
    std::lock_guard snap(snapshot_mutex_);
    std::set<AggregateKey> touched;
    std::map<AggregateKey, std::vector<const StoredRecord*>> groups;
    {
      std::unique_lock lock(mutex_);
      touched.swap(dirty_);
      if (touched.empty()) return 0;
      for (const auto& s : records_)
        for (auto kind : kPeriodKinds) {
          auto key = key_of(s.record, kind);
          if (touched.count(key)) groups[key].push_back(&s);
        }
      std::unique_lock agg(agg_mutex_);
      for (const auto& [key, members] : groups) aggregates_[key] = aggregate(members, key.kind);
    }
    write_aggregates();
    return touched.size();
  }

  std::vector<AggregateRecord> query(const AggregateQuery& q) const {
    std::shared_lock lock(agg_mutex_);
    std::vector<AggregateRecord> out;
    for (const auto& [key, a] : aggregates_) {
      if (key.kind != q.kind) continue;
      if (q.from && a.period_start < *q.from) continue;
      if (q.to && a.period_start >= *q.to) continue;
      if (q.node_id && a.node_id != *q.node_id) continue;
      if (q.class_index && a.class_index != *q.class_index) continue;
      out.push_back(a);
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
      return std::tie(x.period_start, x.node_id, x.class_index) < std::tie(y.period_start, y.node_id, y.class_index);
    });
    return out;
  }

  /// Raw records with from <= timestamp < to, ordered by timestamp then ingest_seq. The range must not exceed 24 h.
  std::vector<StoredRecord> query_raw(Timestamp from, Timestamp to, std::optional<std::string> node_id = {}) const {
    if (to < from || to - from > cfg_.max_raw_range) throw ConfigError("raw query range must be bounded to 24 h");
    std::shared_lock lock(mutex_);
    std::vector<StoredRecord> out;
    for (const auto& s : records_) {
      if (s.record.timestamp < from || s.record.timestamp >= to) continue;
      if (node_id && s.record.node_id != *node_id) continue;
      out.push_back(s);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return std::tie(a.record.timestamp, a.ingest_seq) < std::tie(b.record.timestamp, b.ingest_seq);
    });
    return out;
  }

  std::vector<StoredRecord> records() const {
    std::shared_lock lock(mutex_);
    return records_;
  }
  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }
  std::int64_t rejected() const { return rejected_; }
  std::int64_t duplicates() const { return duplicates_; }

 private:
  using Identity = std::tuple<std::string, Timestamp, int, double>;
  static Identity identity(const MetadataRecord& r) { return {r.node_id, r.timestamp, r.class_index, r.spl}; }

  void load() {
    std::int64_t max_seq = 0;
    for (const auto& entry : std::filesystem::directory_iterator(cfg_.dir / "raw")) {
      if (entry.path().extension() != ".jsonl") continue;
      std::string text;
      {
        std::ifstream in(entry.path(), std::ios::binary);
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      }
      const auto complete = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
      if (complete < text.size()) std::filesystem::resize_file(entry.path(), complete);  // drop a torn trailing write
      std::istringstream in(text.substr(0, complete));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          auto s = stored_from_json(nlohmann::json::parse(line));
          max_seq = std::max(max_seq, s.ingest_seq);
          seen_.emplace(identity(s.record), s.ingest_seq);
          records_.push_back(std::move(s));
        } catch (const std::exception&) {
          ++rejected_;
        }
      }
    }
    std::sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) { return a.ingest_seq < b.ingest_seq; });
    next_seq_ = max_seq + 1;
    aggregates_ = aggregate_all(records_);
    write_aggregates();
  }

  void append(const StoredRecord& s) {
    auto it = files_.find(s.record.node_id);
    if (it == files_.end()) {
      const auto path = cfg_.dir / "raw" / (s.record.node_id + ".jsonl");
      const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
      if (fd < 0) throw Error("cannot open " + path.string());
      it = files_.emplace(s.record.node_id, fd).first;
    }
    const std::string line = to_json(s).dump() + "\n";
    const auto n = ::write(it->second, line.data(), line.size());  // one write per record: no interleaving
    if (n != static_cast<ssize_t>(line.size())) throw Error("short write to raw store");
  }

  void write_aggregates() {
    std::map<PeriodKind, std::string> text;
    {
      std::shared_lock lock(agg_mutex_);
      for (const auto& [key, a] : aggregates_) text[key.kind] += to_json(a).dump() + "\n";
    }
    for (auto kind : kPeriodKinds) {
      const auto path = cfg_.dir / "agg" / (std::string(period_name(kind)) + ".jsonl");
      const auto tmp = path.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text[kind];
        if (!out) throw Error("cannot write " + tmp);
      }
      std::filesystem::rename(tmp, path);
    }
  }

  StoreConfig cfg_;
  mutable std::shared_mutex mutex_;      // raw records, dedup index, dirty set
  mutable std::shared_mutex agg_mutex_;  // aggregate view
  std::mutex snapshot_mutex_;
  std::vector<StoredRecord> records_;
  std::map<Identity, std::int64_t> seen_;
  std::set<AggregateKey> dirty_;
  std::map<AggregateKey, AggregateRecord> aggregates_;
  std::map<std::string, int> files_;
  std::int64_t next_seq_ = 1;
  std::atomic<std::int64_t> rejected_{0};
  std::atomic<std::int64_t> duplicates_{0};
};

/// Reads aggregate rows of one kind straight from <dir>/agg/<kind>.jsonl.
inline std::vector<AggregateRecord> load_aggregates(const std::filesystem::path& dir, PeriodKind kind) {
  std::vector<AggregateRecord> out;
  std::ifstream in(dir / "agg" / (std::string(period_name(kind)) + ".jsonl"));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(aggregate_from_json(nlohmann::json::parse(line)));
  return out;
}

/// Aggregate rows matching `q`, ordered by period start, node, class.
inline std::vector<AggregateRecord> select_aggregates(std::vector<AggregateRecord> rows, const AggregateQuery& q) {
  std::erase_if(rows, [&](const AggregateRecord& a) {
    return a.period_kind != q.kind || (q.from && a.period_start < *q.from) || (q.to && a.period_start >= *q.to) ||
           (q.node_id && a.node_id != *q.node_id) || (q.class_index && a.class_index != *q.class_index);
  });
  std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    return std::tie(x.period_start, x.node_id, x.class_index) < std::tie(y.period_start, y.node_id, y.class_index);
  });
  return rows;
}

/// Reads every raw record under <dir>/raw without modifying the store; a torn last line is skipped.
inline std::vector<StoredRecord> load_raw(const std::filesystem::path& dir) {
  std::vector<StoredRecord> out;
  if (!std::filesystem::is_directory(dir / "raw")) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "raw")) {
    if (entry.path().extension() != ".jsonl") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (in.eof()) break;  // no trailing newline: write still in progress
      if (line.empty()) continue;
      out.push_back(stored_from_json(nlohmann::json::parse(line)));
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.ingest_seq < b.ingest_seq; });
  return out;
}

inline std::string aggregates_csv(const std::vector<AggregateRecord>& rows) {
  std::ostringstream out;
  out.precision(12);
  out << "period_kind,period_start,node_id,class_index,class,count,avg_spl,min_spl,max_spl,avg_doa\n";
  for (const auto& a : rows) {
    out << period_name(a.period_kind) << ',' << format_rfc3339(a.period_start) << ',' << a.node_id << ','
        << a.class_index << ',' << class_label(a.class_index) << ',' << a.count << ',' << round4(a.avg_spl) << ','
        << round4(a.min_spl) << ',' << round4(a.max_spl) << ',';
    if (a.avg_doa) out << round4(*a.avg_doa);
    out << '\n';
  }
  return out.str();
}

// ---- TCP service -----------------------------------------------------------

struct ServerConfig {
  net::Endpoint listen{"127.0.0.1", 0};
  std::chrono::milliseconds snapshot_interval{600'000};
  std::chrono::milliseconds poll{100};
};

/// Thread per connection; each line gets one "ok <seq>" or "err <reason>" reply, in order.
class Server {
 public:
  Server(Store& store, ServerConfig cfg) : store_(store), cfg_(std::move(cfg)) {}
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving; throws NetError if the port cannot be bound.
  void start() {
    listener_ = net::listen_tcp(cfg_.listen);
    port_ = listener_.local_port();
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    snapshotter_ = std::thread([this] { snapshot_loop(); });
  }

  int port() const { return port_; }
  std::size_t connections_served() const { return served_; }

  /// Stops accepting, lets each connection finish the line it is on, joins, and takes a final snapshot.
  void stop() {
    if (!running_.exchange(false)) return;
    {
      std::lock_guard lock(wake_mutex_);
      wake_.notify_all();
    }
    if (acceptor_.joinable()) acceptor_.join();
    std::list<Connection> conns;
    {
      std::lock_guard lock(conn_mutex_);
      conns.swap(connections_);
    }
    for (auto& c : conns)
      if (c.thread.joinable()) c.thread.join();
    if (snapshotter_.joinable()) snapshotter_.join();
    listener_.close();
    store_.snapshot_aggregate();
  }

 private:
  struct Connection {
    net::Socket socket;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (running_) {
      auto sock = net::accept_tcp(listener_, cfg_.poll);
      reap();
      if (!sock) continue;
      std::lock_guard lock(conn_mutex_);
      auto& c = connections_.emplace_back();
      c.socket = std::move(*sock);
      c.thread = std::thread([this, &c] {
        serve(c.socket);
        c.done = true;
      });
      ++served_;
    }
  }

  void reap() {
    std::lock_guard lock(conn_mutex_);
    for (auto it = connections_.begin(); it != connections_.end();) {
      if (it->done) {
        it->thread.join();
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void serve(const net::Socket& sock) {
    net::LineReader reader(sock);
    std::string line;
    try {
      for (;;) {
        const bool live = running_;
        const auto st = reader.read_line(line, live ? cfg_.poll : std::chrono::milliseconds{0});
        if (st == net::ReadStatus::Closed) break;
        if (st == net::ReadStatus::Timeout) {
          if (!live) break;  // shutting down and no complete line left
          continue;
        }
        if (line.empty()) continue;
        const auto res = store_.ingest(line);
        if (!res.accepted) std::clog << "coordinator: rejected record: " << res.reason << '\n';
        net::send_all(sock, res.ack() + "\n");
      }
    } catch (const std::exception& e) {
      std::clog << "coordinator: connection closed: " << e.what() << '\n';
    }
  }

  void snapshot_loop() {
    std::unique_lock lock(wake_mutex_);
    while (running_) {
      wake_.wait_for(lock, cfg_.snapshot_interval, [this] { return !running_; });
      if (!running_) break;
      lock.unlock();
      store_.snapshot_aggregate();
      lock.lock();
    }
  }

  Store& store_;
  ServerConfig cfg_;
  net::Socket listener_;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_, snapshotter_;
  std::mutex conn_mutex_;
  std::list<Connection> connections_;
  std::mutex wake_mutex_;
  std::condition_variable wake_;
  std::atomic<std::size_t> served_{0};
};

}  // namespace urbansound::coordinator
