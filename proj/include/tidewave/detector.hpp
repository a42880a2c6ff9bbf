#pragma once

// Online tide-turn / peak-flow detector over a streaming S(b) feed.
//
// A sample b_k becomes a candidate once every sample up to b_k + look_ahead has
// arrived. It is a high/low water event when S(b_k) is the unique minimum over
// [b_k - look_back, b_k + look_ahead] and a max-flow event when it is the unique
// maximum. Window extrema are tracked with monotone deques, so N samples cost
// O(N) deque operations.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "csv.hpp"
#include "cwt.hpp"
#include "error.hpp"

namespace tidewave::detector {

struct DetectorConfig {
    double look_back = 2700.0; ///< s
    double look_ahead = 300.0; ///< s
    double refractory = 300.0; ///< s skipped after a high/low water event

    void validate() const
    {
        if (!(look_ahead > 0.0) || !(look_back > look_ahead)) {
            throw ValidationError("detector windows must satisfy look_back > look_ahead > 0");
        }
        if (refractory < 0.0) {
            throw ValidationError("detector refractory period must be non-negative");
        }
    }
};

enum class EventKind { HighLowWater, MaxFlow };

inline std::string_view event_kind_name(EventKind k)
{
    return k == EventKind::HighLowWater ? "high_low" : "max_flow";
}

struct DetectionEvent {
    double time = 0.0;
    EventKind kind = EventKind::HighLowWater;
    double value = 0.0;     ///< S at the event
    double emit_time = 0.0; ///< time + look_ahead

    bool operator==(const DetectionEvent&) const = default;
};

struct Counters {
    std::uint64_t samples = 0;
    std::uint64_t deque_ops = 0; ///< pushes plus pops over the four extremum deques
    std::uint64_t evaluations = 0;
    std::uint64_t gap_resets = 0;
};

class Detector {
public:
    explicit Detector(DetectorConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const DetectorConfig& config() const { return cfg_; }
    const Counters& counters() const { return counters_; }

    /// Feeds one sample; returns the events that became decidable with it.
    std::vector<DetectionEvent> push(double time, double value)
    {
        if (!std::isfinite(time) || !std::isfinite(value)) {
            throw ValidationError("detector sample must be finite");
        }
        if (started_ && !(time > last_time_)) {
            throw ValidationError("detector timestamps must be strictly increasing");
        }
        std::vector<DetectionEvent> events;
        if (started_ && time - last_time_ > cfg_.look_ahead) {
            reset_segment();
            ++counters_.gap_resets;
        }
        if (buf_.empty()) {
            segment_start_ = time;
        }
        // Candidates whose look-ahead ends strictly before this sample are already complete.
        while (next_ < end_index() && time > buf_at(next_).time + cfg_.look_ahead + eps()) {
            evaluate(events);
        }
        buf_.push_back({time, value});
        started_ = true;
        last_time_ = time;
        ++counters_.samples;
        while (next_ < end_index() && time >= buf_at(next_).time + cfg_.look_ahead - eps()) {
            evaluate(events);
        }
        return events;
    }

    /// Number of events emitted since construction.
    std::size_t emitted() const { return emitted_; }

private:
    struct Sample {
        double time;
        double value;
    };

    double eps() const { return 1e-9 * (cfg_.look_back + cfg_.look_ahead); }

    std::size_t end_index() const { return base_ + buf_.size(); }
    const Sample& buf_at(std::size_t i) const { return buf_[i - base_]; }

    void reset_segment()
    {
        base_ += buf_.size();
        buf_.clear();
        next_ = base_;
        right_ = base_;
        min_first_.clear();
        min_last_.clear();
        max_first_.clear();
        max_last_.clear();
        skip_until_ = -std::numeric_limits<double>::infinity();
    }

    void push_index(std::size_t i)
    {
        const double v = buf_at(i).value;
        auto push = [&](std::deque<std::size_t>& dq, auto worse) {
            while (!dq.empty() && worse(buf_at(dq.back()).value, v)) {
                dq.pop_back();
                ++counters_.deque_ops;
            }
            dq.push_back(i);
            ++counters_.deque_ops;
        };
        push(min_first_, [](double back, double nv) { return back > nv; });
        push(min_last_, [](double back, double nv) { return back >= nv; });
        push(max_first_, [](double back, double nv) { return back < nv; });
        push(max_last_, [](double back, double nv) { return back <= nv; });
    }

    void expire(double left)
    {
        for (auto* dq : {&min_first_, &min_last_, &max_first_, &max_last_}) {
            while (!dq->empty() && buf_at(dq->front()).time < left - eps()) {
                dq->pop_front();
                ++counters_.deque_ops;
            }
        }
    }

    void evaluate(std::vector<DetectionEvent>& events)
    {
        const std::size_t c = next_++;
        const Sample cand = buf_at(c);
        const double left = cand.time - cfg_.look_back;
        const double right = cand.time + cfg_.look_ahead;
        while (right_ < end_index() && buf_at(right_).time <= right + eps()) {
            push_index(right_++);
        }
        expire(left);
        ++counters_.evaluations;
        // Samples left of this window are out of every later window too.
        while (!buf_.empty() && base_ < c && buf_.front().time < left - eps()) {
            buf_.pop_front();
            ++base_;
        }
        if (left < segment_start_ - eps() || cand.time <= skip_until_ + eps()) {
            return;
        }
        const bool strict_min = min_first_.front() == c && min_last_.front() == c;
        const bool strict_max = max_first_.front() == c && max_last_.front() == c;
        if (strict_min) {
            events.push_back({cand.time, EventKind::HighLowWater, cand.value, cand.time + cfg_.look_ahead});
            skip_until_ = cand.time + cfg_.refractory;
            ++emitted_;
        } else if (strict_max) {
            events.push_back({cand.time, EventKind::MaxFlow, cand.value, cand.time + cfg_.look_ahead});
            ++emitted_;
        }
    }

    DetectorConfig cfg_;
    Counters counters_;
    std::deque<Sample> buf_;
    std::size_t base_ = 0;  ///< absolute index of buf_.front()
    std::size_t next_ = 0;  ///< next candidate to evaluate
    std::size_t right_ = 0; ///< next index to enter the extremum deques
    std::deque<std::size_t> min_first_, min_last_, max_first_, max_last_;
    double segment_start_ = 0.0;
    double last_time_ = 0.0;
    double skip_until_ = -std::numeric_limits<double>::infinity();
    bool started_ = false;
    std::size_t emitted_ = 0;
};

struct OfflineResult {
    std::vector<DetectionEvent> events;
    Counters counters;
};

/// Batch wrapper: pushes every finite sample in order. With `coi_only`, samples
/// flagged as edge-affected are skipped as well.
inline OfflineResult detect_offline(const cwt::TideBandFeature& feature, const DetectorConfig& cfg = {},
                                    bool coi_only = false)
{
    if (feature.times.empty()) {
        throw ValidationError("detect_offline: empty series");
    }
    Detector det(cfg);
    OfflineResult out;
    for (std::size_t i = 0; i < feature.times.size(); ++i) {
        if (!std::isfinite(feature.values[i]) || (coi_only && !feature.valid[i])) {
            continue;
        }
        auto ev = det.push(feature.times[i], feature.values[i]);
        out.events.insert(out.events.end(), ev.begin(), ev.end());
    }
    out.counters = det.counters();
    return out;
}

inline void write_events_jsonl(std::ostream& out, const std::vector<DetectionEvent>& events)
{
    for (const auto& e : events) {
        out << "{\"t\": " << csv::format_double(e.time) << ", \"kind\": \"" << event_kind_name(e.kind)
            << "\", \"s_value\": " << csv::format_double(e.value) << ", \"emitted_at\": "
            << csv::format_double(e.emit_time) << "}\n";
    }
}

} // namespace tidewave::detector
