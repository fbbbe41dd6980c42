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

// Edge node: capture -> process -> publish on three threads, plus a watchdog.
//
// Capture frames the source into 8192-sample AudioFrames. Process keeps the
// last 1.5 s of channel 0, classifies every frame, tracks SPL and the trailing
// one-minute LAeq, and on a trigger estimates the azimuth and packs a record.
// Publish streams records as newline-delimited JSON and waits for "ok <seq>"
// acknowledgements.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "urbansound/classify.hpp"
#include "urbansound/common.hpp"
#include "urbansound/doa.hpp"
#include "urbansound/dsp.hpp"
#include "urbansound/metadata.hpp"
#include "urbansound/net.hpp"
#include "urbansound/wav.hpp"

namespace urbansound::node {

using SteadyTime = std::chrono::steady_clock::time_point;
using std::chrono::milliseconds;

// ---- bounded queue ---------------------------------------------------------

template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("queue capacity must be >= 1");
  }

  /// Never blocks; when full the oldest item is discarded. Returns true if something was dropped.
  bool push_drop_oldest(T v) {
    std::lock_guard lock(m_);
    bool dropped = false;
    if (q_.size() >= capacity_) {
      q_.pop_front();
      ++dropped_;
      dropped = true;
    }
    q_.push_back(std::move(v));
    cv_.notify_all();
    return dropped;
  }

  /// Waits up to `timeout` for space; returns false (and keeps `v`) on timeout.
  bool push_wait(T& v, milliseconds timeout) {
    std::unique_lock lock(m_);
    if (!cv_.wait_for(lock, timeout, [&] { return q_.size() < capacity_; })) return false;
    q_.push_back(std::move(v));
    cv_.notify_all();
    return true;
  }

  std::optional<T> pop_wait(milliseconds timeout) {
    std::unique_lock lock(m_);
    if (!cv_.wait_for(lock, timeout, [&] { return !q_.empty() || closed_; })) return std::nullopt;
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    cv_.notify_all();
    return v;
  }

  void close() {
    std::lock_guard lock(m_);
    closed_ = true;
    cv_.notify_all();
  }
  bool closed() const {
    std::lock_guard lock(m_);
    return closed_;
  }
  /// Closed and empty: nothing more will ever be popped.
  bool drained() const {
    std::lock_guard lock(m_);
    return closed_ && q_.empty();
  }
  std::size_t size() const {
    std::lock_guard lock(m_);
    return q_.size();
  }
  std::size_t dropped() const {
    std::lock_guard lock(m_);
    return dropped_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
  std::size_t dropped_ = 0;
};

// ---- configuration ---------------------------------------------------------

enum class MicMode { Single, Array7 };
enum class EmitPolicy { Onset, EveryFrame };
enum class CaptureMode { Live, Offline };

inline MicMode parse_mic_mode(std::string_view s) {
  if (s == "single") return MicMode::Single;
  if (s == "array7") return MicMode::Array7;
  throw ConfigError("mode must be single or array7");
}

struct PublisherConfig {
  net::Endpoint endpoint;
  std::size_t window = 32;  // unacknowledged records in flight
  milliseconds backoff_base{1000};
  milliseconds backoff_cap{60'000};
  int retry_budget = 12;  // consecutive failed connects before spooling
  milliseconds ack_timeout{10'000};
  milliseconds connect_timeout{2000};
  std::filesystem::path spool_file;  // empty: keep undeliverable records in memory
};

struct NodeConfig {
  std::string node_id = "node";
  MicMode mic_mode = MicMode::Array7;
  std::optional<PublisherConfig> publisher;
  dsp::CalibrationConfig calibration{};
  doa::ArrayGeometry geometry = doa::ArrayGeometry::concentric();
  doa::DoaConfig doa{};
  std::size_t process_queue = 64;
  std::size_t publish_queue = 256;
  milliseconds heartbeat_interval{1000};
  double activity_gate_db = 45.0;
  EmitPolicy emit = EmitPolicy::Onset;
  CaptureMode capture = CaptureMode::Offline;
  bool realtime = false;  // pace capture at the audio rate
  std::size_t chunk_frames = 4096;
  Timestamp start = now_utc();
  std::shared_ptr<const classify::BaselineModel> model;

  void validate() const {
    if (!valid_node_id(node_id)) throw ConfigError("invalid node id");
    if (!model || !model->trained()) throw ConfigError("a trained model is required");
    if (process_queue < 1 || publish_queue < 1) throw ConfigError("queue capacities must be >= 1");
    if (heartbeat_interval.count() <= 0) throw ConfigError("heartbeat interval must be positive");
    if (mic_mode == MicMode::Array7 && geometry.mics.size() != kArrayChannels)
      throw ConfigError("array7 mode needs a 7-microphone geometry");
    calibration.validate();
    doa.validate();
  }
  int channels() const { return mic_mode == MicMode::Single ? 1 : kArrayChannels; }
};

// ---- sources ---------------------------------------------------------------

class AudioSource {
 public:
  virtual ~AudioSource() = default;
  virtual int channels() const = 0;
  virtual int sample_rate() const = 0;
  /// Up to `frames` interleaved sample frames; nullopt once exhausted.
  virtual std::optional<std::vector<std::int16_t>> read(std::size_t frames) = 0;
};

class PcmSource : public AudioSource {
 public:
  explicit PcmSource(PcmAudio audio) : audio_(std::move(audio)) {}
  int channels() const override { return audio_.channels; }
  int sample_rate() const override { return audio_.sample_rate; }
  std::optional<std::vector<std::int16_t>> read(std::size_t frames) override {
    const std::size_t total = audio_.frames();
    if (pos_ >= total) return std::nullopt;
    const std::size_t n = std::min(frames, total - pos_);
    const auto* begin = audio_.interleaved.data() + pos_ * audio_.channels;
    pos_ += n;
    return std::vector<std::int16_t>(begin, begin + n * audio_.channels);
  }

 private:
  PcmAudio audio_;
  std::size_t pos_ = 0;
};

/// Channel 0 of a multichannel recording, as a mono stream.
inline PcmAudio mono_channel(const PcmAudio& audio, int c = 0) {
  PcmAudio out;
  out.sample_rate = audio.sample_rate;
  out.channels = 1;
  out.interleaved = audio.channel(c);
  return out;
}

// ---- process stage ---------------------------------------------------------

struct ProcessOutput {
  dsp::SplSample spl;
  classify::ScoreVector scores;
  std::optional<MetadataRecord> record;
};

/// Per-frame analysis state. Not thread-safe; owned by the process stage.
class Processor {
 public:
  explicit Processor(const NodeConfig& cfg) : cfg_(cfg), ring_(dsp::kSegmentSamples, 0) {
    if (cfg_.mic_mode == MicMode::Array7) solver_.emplace(cfg_.geometry);
  }

  ProcessOutput process(const dsp::AudioFrame& frame) {
    if (frame.channels != cfg_.channels()) throw ConfigError("frame channel count does not match mic mode");
    const auto ch0 = frame.channel(0);
    for (std::int16_t v : ch0) {
      ring_[head_] = v;
      head_ = (head_ + 1) % ring_.size();
    }
    filled_ = std::min(filled_ + ch0.size(), ring_.size());

    ProcessOutput out;
    out.spl = dsp::a_weight_spl(frame, 0, cfg_.calibration);
    laeq_.add(out.spl);

    if (filled_ == ring_.size() && out.spl.level >= cfg_.activity_gate_db) {
      std::vector<std::int16_t> segment(ring_.size());
      std::copy(ring_.begin() + head_, ring_.end(), segment.begin());
      std::copy(ring_.begin(), ring_.begin() + head_, segment.begin() + (ring_.size() - head_));
      out.scores = classify::classify(dsp::log_mel(std::span<const std::int16_t>(segment), cfg_.calibration),
                                      *cfg_.model, frame.index, frame.timestamp);
    } else {
      out.scores = {frame.index, frame.timestamp, classify::uniform_scores()};
    }

    const auto event = detector_.feed(out.scores);
    const bool fire = event.has_value();
    const bool onset = fire && (!last_fired_ || *last_fired_ != event->class_index);
    last_fired_ = fire ? std::optional<int>(event->class_index) : std::nullopt;
    if (fire && (cfg_.emit == EmitPolicy::EveryFrame || onset)) {
      std::optional<int> azimuth;
      if (solver_) azimuth = doa::estimate_doa(frame, *solver_, cfg_.doa).quantized_deg;
      out.record = pack_metadata(*event, out.spl.level, laeq_.value().value_or(out.spl.level), azimuth, cfg_.node_id);
    }
    return out;
  }

 private:
  const NodeConfig& cfg_;
  std::vector<std::int16_t> ring_;
  std::size_t head_ = 0, filled_ = 0;
  dsp::LaeqWindow laeq_;
  classify::TriggerDetector detector_;
  std::optional<int> last_fired_;
  std::optional<doa::LeastSquaresDoa> solver_;
};

// ---- publisher -------------------------------------------------------------

struct DeliveryReport {
  std::size_t acked = 0;
  std::size_t rejected = 0;
  std::size_t spooled = 0;
  std::size_t replayed = 0;
  std::size_t reconnects = 0;
  std::size_t resent = 0;
  std::vector<std::string> rejections;
};

/// Ordered at-least-once delivery of record lines with a window of unacknowledged sends.
class Publisher {
 public:
  explicit Publisher(PublisherConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.window < 1) throw ConfigError("publish window must be >= 1");
    load_spool();
  }

  void add(std::string line) { pending_.push_back({std::move(line), false, false}); }

  /// Nothing left to deliver or spool.
  bool idle() const { return pending_.empty(); }
  bool connected() const { return sock_.valid(); }
  bool spooling() const { return spooling_; }
  void flush_spool() { spool_pending(); }
  const DeliveryReport& report() const { return report_; }

  void disconnect() {
    sock_.close();
    reader_.reset();
    for (auto& p : pending_) p.sent = false;
    in_flight_ = 0;
  }

  /// Does at most `slice` worth of connecting, sending and ack handling.
  void service(milliseconds slice) {
    const auto now = std::chrono::steady_clock::now();
    if (spooling_) {
      spool_pending();
      if (now < next_attempt_) return sleep_until(std::min(next_attempt_, now + slice));
      if (!try_connect()) {
        next_attempt_ = now + cfg_.backoff_cap;
        return;
      }
      spooling_ = false;
      load_spool();
    }
    if (!sock_.valid()) {
      if (pending_.empty()) return sleep_until(now + slice);
      if (now < next_attempt_) return sleep_until(std::min(next_attempt_, now + slice));
      if (!try_connect()) {
        ++failures_;
        if (failures_ > cfg_.retry_budget) {
          spooling_ = true;
          spool_pending();
          next_attempt_ = now + cfg_.backoff_cap;
        } else {
          next_attempt_ = now + backoff(failures_);
        }
        return;
      }
    }
    try {
      send_window();
      read_acks(slice);
    } catch (const net::NetError& e) {
      std::clog << "publish: " << e.what() << '\n';
      disconnect();
    }
  }

  /// Delay before connect attempt number `failures` + 1: base * 2^(failures-1), capped.
  milliseconds backoff(int failures) const {
    auto d = cfg_.backoff_base;
    for (int i = 1; i < failures && d < cfg_.backoff_cap; ++i) d *= 2;
    return std::min(d, cfg_.backoff_cap);
  }

 private:
  struct Pending {
    std::string line;
    bool sent = false;
    bool was_sent_before = false;
  };

  static void sleep_until(SteadyTime t) { std::this_thread::sleep_until(t); }

  bool try_connect() {
    try {
      sock_ = net::connect_tcp(cfg_.endpoint, cfg_.connect_timeout);
    } catch (const net::NetError&) {
      return false;
    }
    reader_ = std::make_unique<net::LineReader>(sock_);
    if (ever_connected_) ++report_.reconnects;
    ever_connected_ = true;
    failures_ = 0;
    return true;
  }

  void send_window() {
    std::string batch;
    for (auto& p : pending_) {
      if (in_flight_ >= cfg_.window) break;
      if (p.sent) continue;
      if (p.line.empty()) continue;
      batch += p.line;
      batch += '\n';
      if (p.was_sent_before) ++report_.resent;
      p.sent = true;
      p.was_sent_before = true;
      ++in_flight_;
    }
    if (!batch.empty()) {
      net::send_all(sock_, batch);
      if (!oldest_sent_) oldest_sent_ = std::chrono::steady_clock::now();
    }
  }

  void read_acks(milliseconds slice) {
    if (in_flight_ == 0) return;
    std::string line;
    const auto st = reader_->read_line(line, slice);
    if (st == net::ReadStatus::Closed) throw net::NetError("coordinator closed the connection");
    if (st == net::ReadStatus::Timeout) {
      if (oldest_sent_ && std::chrono::steady_clock::now() - *oldest_sent_ > cfg_.ack_timeout)
        throw net::NetError("ack timeout");
      return;
    }
    do {
      if (line.rfind("ok ", 0) == 0 && line.size() > 3 &&
          line.find_first_not_of("0123456789", 3) == std::string::npos) {
        ++report_.acked;
      } else if (line.rfind("err", 0) == 0) {
        ++report_.rejected;
        report_.rejections.push_back(line.size() > 4 ? line.substr(4) : std::string());
      } else {
        throw net::NetError("malformed ack: " + line);
      }
      pending_.pop_front();
      --in_flight_;
      oldest_sent_ = in_flight_ > 0 ? std::optional(std::chrono::steady_clock::now()) : std::nullopt;
    } while (in_flight_ > 0 && reader_->read_line(line, milliseconds{0}) == net::ReadStatus::Line);
  }

  /// Moves undelivered records to the spool file (no-op without one).
  void spool_pending() {
    if (pending_.empty()) return;
    if (cfg_.spool_file.empty()) return;  // kept in memory until a connection succeeds
    if (!cfg_.spool_file.parent_path().empty()) std::filesystem::create_directories(cfg_.spool_file.parent_path());
    std::ofstream out(cfg_.spool_file, std::ios::app);
    for (const auto& p : pending_) out << p.line << '\n';
    out.flush();
    if (!out) throw Error("cannot write spool file " + cfg_.spool_file.string());
    report_.spooled += pending_.size();
    pending_.clear();
    in_flight_ = 0;
  }

  void load_spool() {
    if (cfg_.spool_file.empty() || !std::filesystem::exists(cfg_.spool_file)) return;
    std::ifstream in(cfg_.spool_file);
    std::deque<Pending> replay;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) replay.push_back({line, false, false});
    in.close();
    report_.replayed += replay.size();
    for (auto& p : pending_) replay.push_back(std::move(p));
    pending_.swap(replay);
    std::filesystem::remove(cfg_.spool_file);
  }

  PublisherConfig cfg_;
  std::deque<Pending> pending_;
  net::Socket sock_;
  std::unique_ptr<net::LineReader> reader_;
  std::size_t in_flight_ = 0;
  std::optional<SteadyTime> oldest_sent_;
  SteadyTime next_attempt_{};
  int failures_ = 0;
  bool spooling_ = false;
  bool ever_connected_ = false;
  DeliveryReport report_;
};

// ---- watchdog --------------------------------------------------------------

enum class Stage { Capture = 0, Process = 1, Publish = 2 };
inline constexpr int kStages = 3;

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Capture: return "capture";
    case Stage::Process: return "process";
    case Stage::Publish: return "publish";
  }
  return "?";
}

/// Last heartbeat per stage; nullopt for a stage that finished normally.
struct HeartbeatState {
  std::array<std::optional<SteadyTime>, kStages> last_ok{};
};

enum class WatchdogAction { None, Restart, Fatal };

struct WatchdogPolicy {
  milliseconds interval{1000};
  int stale_intervals = 3;
  int max_restarts = 5;
  std::chrono::minutes restart_window{10};
};

/// Restart when any live stage is stale by more than 3 intervals; Fatal if that would exceed
/// 5 restarts within 10 minutes.
inline WatchdogAction watchdog_decide(const HeartbeatState& hb, SteadyTime now, const std::deque<SteadyTime>& restarts,
                                      const WatchdogPolicy& p = {}) {
  bool stale = false;
  for (const auto& t : hb.last_ok)
    if (t && now - *t > p.stale_intervals * p.interval) stale = true;
  if (!stale) return WatchdogAction::None;
  const auto recent = std::count_if(restarts.begin(), restarts.end(),
                                    [&](SteadyTime r) { return now - r <= p.restart_window; });
  return recent >= p.max_restarts ? WatchdogAction::Fatal : WatchdogAction::Restart;
}

// ---- pipeline --------------------------------------------------------------

struct NodeReport {
  std::vector<MetadataRecord> records;
  std::vector<dsp::SplSample> spl;
  std::size_t frames_processed = 0;
  std::size_t frames_dropped = 0;
  int restarts = 0;
  bool fatal = false;
  DeliveryReport delivery;
};

/// Test hook run at the top of each stage iteration; may block to simulate a stall.
using StageHook = std::function<void(Stage)>;

class Pipeline {
 public:
  Pipeline(NodeConfig cfg, std::unique_ptr<AudioSource> source)
      : cfg_(std::move(cfg)),
        source_(std::move(source)),
        framer_(cfg_.node_id, cfg_.channels(), cfg_.start, source_ ? source_->sample_rate() : kSampleRate),
        frames_(cfg_.process_queue),
        records_(cfg_.publish_queue),
        processor_(cfg_) {
    cfg_.validate();
    if (!source_) throw ConfigError("no audio source");
    if (source_->channels() != cfg_.channels())
      throw ConfigError("source has " + std::to_string(source_->channels()) + " channels; mode needs " +
                        std::to_string(cfg_.channels()));
    if (cfg_.publisher) publisher_.emplace(*cfg_.publisher);
    policy_.interval = cfg_.heartbeat_interval;
  }
  ~Pipeline() { stop(); }
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void set_hook(StageHook hook) { hook_ = std::move(hook); }
  void on_record(std::function<void(const MetadataRecord&)> fn) { record_sink_ = std::move(fn); }

  void start() {
    if (started_.exchange(true)) return;
    spawn();
    monitor_ = std::thread([this] { monitor_loop(); });
  }

  /// Blocks until every stage has finished or the watchdog gave up.
  NodeReport wait() {
    {
      std::unique_lock lock(done_mutex_);
      done_cv_.wait(lock, [&] { return all_finished() || fatal_; });
    }
    stop();
    std::lock_guard lock(report_mutex_);
    NodeReport r = report_;
    r.frames_dropped = frames_.dropped();
    r.restarts = restarts_;
    r.fatal = fatal_;
    if (publisher_) r.delivery = publisher_->report();
    return r;
  }

  NodeReport run() {
    start();
    return wait();
  }

  /// Joins the stage threads and respawns them; queues, framer, processor and publisher state survive.
  void restart() {
    std::lock_guard lock(lifecycle_mutex_);
    halt_stages();
    ++restarts_;
    spawn();
  }

  void stop() {
    shutting_down_ = true;
    {
      std::lock_guard lock(done_mutex_);
      done_cv_.notify_all();
    }
    if (monitor_.joinable()) monitor_.join();
    std::lock_guard lock(lifecycle_mutex_);
    halt_stages();
  }

  int restarts() const { return restarts_; }
  HeartbeatState heartbeat() const {
    HeartbeatState hb;
    for (int i = 0; i < kStages; ++i) {
      if (finished_[i]) continue;
      hb.last_ok[i] = SteadyTime(std::chrono::steady_clock::duration(beats_[i].load()));
    }
    return hb;
  }

 private:
  void beat(Stage s) { beats_[static_cast<int>(s)] = std::chrono::steady_clock::now().time_since_epoch().count(); }

  milliseconds slice() const { return std::max(milliseconds{1}, cfg_.heartbeat_interval / 4); }

  bool all_finished() const { return finished_[0] && finished_[1] && finished_[2]; }

  void finish(Stage s) {
    finished_[static_cast<int>(s)] = true;
    std::lock_guard lock(done_mutex_);
    done_cv_.notify_all();
  }

  void spawn() {
    halt_ = false;
    for (int i = 0; i < kStages; ++i) beat(static_cast<Stage>(i));
    if (!finished_[0]) threads_[0] = std::thread([this] { guarded(Stage::Capture, [this] { capture_loop(); }); });
    if (!finished_[1]) threads_[1] = std::thread([this] { guarded(Stage::Process, [this] { process_loop(); }); });
    if (!finished_[2]) threads_[2] = std::thread([this] { guarded(Stage::Publish, [this] { publish_loop(); }); });
  }

  void halt_stages() {
    halt_ = true;
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  template <class Fn>
  void guarded(Stage s, Fn fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      // The stage stops beating; the watchdog restarts it.
      std::clog << "node " << cfg_.node_id << ": " << stage_name(s) << " stage failed: " << e.what() << '\n';
      while (!halt_) std::this_thread::sleep_for(slice());
    }
  }

  bool stopping() const { return halt_ || shutting_down_; }

  void capture_loop() {
    const auto pace_start = std::chrono::steady_clock::now();
    while (!stopping()) {
      beat(Stage::Capture);
      if (hook_) hook_(Stage::Capture);
      while (!backlog_.empty()) {
        if (cfg_.capture == CaptureMode::Live) {
          frames_.push_drop_oldest(std::move(backlog_.front()));
        } else if (!frames_.push_wait(backlog_.front(), slice())) {
          beat(Stage::Capture);
          if (stopping()) return;
          continue;
        }
        backlog_.pop_front();
      }
      auto chunk = source_->read(cfg_.chunk_frames);
      if (!chunk) {
        frames_.close();
        finish(Stage::Capture);
        return;
      }
      for (auto& f : framer_.push(*chunk)) backlog_.push_back(std::move(f));
      if (cfg_.realtime) {
        const auto due = pace_start + std::chrono::microseconds(std::llround(
                                          1e6 * static_cast<double>(framer_.frames_emitted()) * kFrameSamples / kSampleRate));
        std::this_thread::sleep_until(due);
      }
    }
  }

  void process_loop() {
    while (!stopping()) {
      beat(Stage::Process);
      while (!record_backlog_.empty()) {
        if (!records_.push_wait(record_backlog_.front(), slice())) {
          beat(Stage::Process);
          if (stopping()) return;
          continue;
        }
        record_backlog_.pop_front();
      }
      auto frame = frames_.pop_wait(slice());
      if (!frame) {
        if (frames_.drained()) {
          records_.close();
          finish(Stage::Process);
          return;
        }
        continue;
      }
      if (hook_) hook_(Stage::Process);
      auto out = processor_.process(*frame);
      {
        std::lock_guard lock(report_mutex_);
        ++report_.frames_processed;
        report_.spl.push_back(out.spl);
        if (out.record) report_.records.push_back(*out.record);
      }
      if (out.record) {
        if (record_sink_) record_sink_(*out.record);
        record_backlog_.push_back(std::move(*out.record));
      }
    }
  }

  void publish_loop() {
    while (!stopping()) {
      beat(Stage::Publish);
      if (hook_) hook_(Stage::Publish);
      if (!publisher_) {
        if (records_.pop_wait(slice())) continue;
        if (records_.drained()) return finish(Stage::Publish);
        continue;
      }
      while (auto r = records_.pop_wait(milliseconds{0})) publisher_->add(serialize(*r));
      if (records_.drained() && publisher_->spooling() && !cfg_.publisher->spool_file.empty()) publisher_->flush_spool();
      if (records_.drained() && publisher_->idle()) {
        publisher_->disconnect();
        return finish(Stage::Publish);
      }
      if (publisher_->idle()) {
        if (auto r = records_.pop_wait(slice())) publisher_->add(serialize(*r));
        continue;
      }
      publisher_->service(slice());
    }
    if (publisher_) publisher_->disconnect();
  }

  void monitor_loop() {
    std::deque<SteadyTime> history;
    while (!shutting_down_ && !all_finished()) {
      {
        std::unique_lock lock(done_mutex_);
        done_cv_.wait_for(lock, slice(), [&] { return shutting_down_.load() || all_finished(); });
      }
      if (shutting_down_ || all_finished()) break;
      const auto now = std::chrono::steady_clock::now();
      const auto action = watchdog_decide(heartbeat(), now, history, policy_);
      if (action == WatchdogAction::Fatal) {
        std::clog << "node " << cfg_.node_id << ": watchdog giving up after repeated restarts\n";
        fatal_ = true;
        std::lock_guard lock(done_mutex_);
        done_cv_.notify_all();
        break;
      }
      if (action == WatchdogAction::Restart) {
        std::clog << "node " << cfg_.node_id << ": watchdog restarting stalled pipeline\n";
        history.push_back(now);
        restart();
      }
    }
  }

  NodeConfig cfg_;
  std::unique_ptr<AudioSource> source_;
  dsp::Framer framer_;
  BoundedQueue<dsp::AudioFrame> frames_;
  BoundedQueue<MetadataRecord> records_;
  Processor processor_;
  std::optional<Publisher> publisher_;
  std::deque<dsp::AudioFrame> backlog_;
  std::deque<MetadataRecord> record_backlog_;
  StageHook hook_;
  std::function<void(const MetadataRecord&)> record_sink_;
  WatchdogPolicy policy_;

  std::array<std::thread, kStages> threads_;
  std::thread monitor_;
  std::array<std::atomic<std::int64_t>, kStages> beats_{};
  std::array<std::atomic<bool>, kStages> finished_{};
  std::atomic<bool> halt_{false}, shutting_down_{false}, started_{false}, fatal_{false};
  std::atomic<int> restarts_{0};
  std::mutex lifecycle_mutex_, done_mutex_, report_mutex_;
  std::condition_variable done_cv_;
  NodeReport report_;
};

inline NodeReport run_pipeline(const PcmAudio& audio, NodeConfig cfg) {
  Pipeline p(std::move(cfg), std::make_unique<PcmSource>(audio));
  return p.run();
}

}  // namespace urbansound::node
