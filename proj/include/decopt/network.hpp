#pragma once

// Execution strategies for the block operator W. A Network counts one round
// per W application and per-node oracle calls; methods are written against
// this interface and run unchanged on either strategy.

#include "decopt/common.hpp"
#include "decopt/graph.hpp"

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <vector>

#include "json.hpp"

namespace decopt {

class Network {
 public:
  Network(const LaplacianGraph& g, int n, int threads = 1)
      : graph_(g), n_(n), threads_(threads), oracle_calls_(static_cast<std::size_t>(g.m()), 0) {}
  Network(LaplacianGraph&&, int, int = 1) = delete;
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const LaplacianGraph& graph() const { return graph_; }
  int m() const { return graph_.m(); }
  int n() const { return n_; }
  int threads() const { return threads_; }

  /// One synchronous round: out = (Wbar (x) I_n) in.
  void mix(const Vector& in, Vector& out) {
    if (in.size() != static_cast<Eigen::Index>(m()) * n_)
      throw DimensionMismatch("mix input has length " + std::to_string(in.size()));
    out.resize(in.size());
    round_apply(in, out);
    ++rounds_;
  }
  long rounds() const { return rounds_; }

  /// Runs fn(k) for every node; fn may touch only node k's blocks.
  template <class Fn>
  void for_each_node(Fn&& fn) {
    parallel_for(static_cast<std::size_t>(m()), threads_, [&](std::size_t k) {
      note_local_compute(static_cast<int>(k));
      fn(static_cast<int>(k));
    });
  }

  void add_oracle_calls(int k, long count) { oracle_calls_[static_cast<std::size_t>(k)] += count; }
  const std::vector<long>& oracle_calls() const { return oracle_calls_; }
  long max_oracle_calls() const {
    return oracle_calls_.empty() ? 0 : *std::max_element(oracle_calls_.begin(), oracle_calls_.end());
  }

 protected:
  virtual void round_apply(const Vector& in, Vector& out) = 0;
  virtual void note_local_compute(int) {}

 private:
  const LaplacianGraph& graph_;
  int n_;
  int threads_;
  long rounds_ = 0;
  std::vector<long> oracle_calls_;
};

/// W applied directly with the Laplacian stencil.
class CentralizedNetwork final : public Network {
 public:
  using Network::Network;

 protected:
  void round_apply(const Vector& in, Vector& out) override { apply_block(graph(), in, out, n()); }
};

// Message-passing simulation ----------------------------------------------------

struct Message {
  int from = -1;
  Vector payload;
};

struct NodeState {
  int id = 0;
  Vector outgoing;             // vector this node publishes in the current round
  std::vector<Message> inbox;  // one slot per neighbour, in neighbour-id order
  long oracle_calls = 0;
  std::uint64_t rng_root = 0;
};

struct RoundLog {
  long round_index = 0;
  long messages = 0;
  long bytes_exchanged = 0;
  double wall = 0.0;
};

struct AccessRecord {
  long round = 0;
  int reader = 0;
  int owner = 0;
};

struct SimulationConfig {
  int threads = 1;
  bool audit = true;
  bool event_log = false;
  std::uint64_t rng_root = 0;
};

/// Each round has an exchange phase, in which the fabric copies every node's
/// outgoing vector into its neighbours' inboxes, and a compute phase in which
/// node k sees only its own vector and its inbox.
class SimulatedNetwork : public Network {
 public:
  SimulatedNetwork(LaplacianGraph&&, int, const SimulationConfig& = {}) = delete;
  SimulatedNetwork(const LaplacianGraph& g, int n, const SimulationConfig& cfg = {})
      : Network(g, n, cfg.threads), cfg_(cfg), per_node_access_(static_cast<std::size_t>(g.m())) {
    nodes_.resize(static_cast<std::size_t>(g.m()));
    for (int k = 0; k < g.m(); ++k) {
      NodeState& s = nodes_[static_cast<std::size_t>(k)];
      s.id = k;
      s.outgoing = Vector::Zero(n);
      s.rng_root = splitmix(cfg.rng_root, static_cast<std::uint64_t>(k));
      for (int j : g.neighbors(k)) s.inbox.push_back(Message{j, Vector::Zero(n)});
    }
  }

  const std::vector<NodeState>& nodes() const { return nodes_; }
  const std::vector<RoundLog>& round_log() const { return round_log_; }
  const std::vector<AccessRecord>& access_log() const { return access_log_; }

  /// One JSON object per node and round: {round, node, msg_count, oracle_calls}.
  void write_event_log(std::ostream& os) const {
    for (const auto& e : events_) {
      nlohmann::ordered_json j;
      j["round"] = e.round;
      j["node"] = e.node;
      j["msg_count"] = e.msg_count;
      j["oracle_calls"] = e.oracle_calls;
      os << j.dump() << '\n';
    }
  }

 protected:
  void round_apply(const Vector& in, Vector& out) override {
    const int n = this->n();
    for_nodes([&](int k) { nodes_[static_cast<std::size_t>(k)].outgoing = in.segment(static_cast<Eigen::Index>(k) * n, n); });
    // Exchange phase.
    for_nodes([&](int k) {
      for (Message& msg : nodes_[static_cast<std::size_t>(k)].inbox)
        msg.payload = nodes_[static_cast<std::size_t>(msg.from)].outgoing;
    });
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (nodes_[k].inbox.size() != static_cast<std::size_t>(graph().degree(static_cast<int>(k))))
        throw TopologyViolation("inbox size differs from degree at node " + std::to_string(k));
      nodes_[k].oracle_calls = oracle_calls()[k];
    }
    // Compute phase.
    for_nodes([&](int k) {
      auto dst = out.segment(static_cast<Eigen::Index>(k) * n, n);
      Vector local(n);
      compute(k, local);
      dst = local;
    });
    finish_round();
  }

  void note_local_compute(int k) override { record(k, k); }

  /// Laplacian stencil evaluated by node k from its inbox.
  virtual void compute(int k, Vector& out) {
    const NodeState& s = nodes_[static_cast<std::size_t>(k)];
    record(k, k);
    out = static_cast<double>(graph().degree(k)) * s.outgoing;
    for (const Message& msg : s.inbox) {
      record(k, msg.from);
      out -= msg.payload;
    }
  }

  /// Direct read of another node's published vector. Shipped compute() never
  /// calls this; it exists so the locality audit can be exercised.
  const Vector& peek(int reader, int owner) {
    record(reader, owner);
    return nodes_[static_cast<std::size_t>(owner)].outgoing;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  template <class Fn>
  void for_nodes(Fn&& fn) {
    parallel_for(nodes_.size(), threads(), [&](std::size_t k) { fn(static_cast<int>(k)); });
  }

  void record(int reader, int owner) {
    if (cfg_.audit)
      per_node_access_[static_cast<std::size_t>(reader)].push_back(AccessRecord{rounds(), reader, owner});
  }

  void finish_round() {
    for (auto& bucket : per_node_access_) {
      access_log_.insert(access_log_.end(), bucket.begin(), bucket.end());
      bucket.clear();
    }
    RoundLog log;
    log.round_index = rounds();
    log.messages = 2 * static_cast<long>(graph().edges().size());
    log.bytes_exchanged = log.messages * n() * static_cast<long>(sizeof(double));
    round_log_.push_back(log);
    if (cfg_.event_log)
      for (const NodeState& s : nodes_)
        events_.push_back(Event{rounds(), s.id, static_cast<int>(s.inbox.size()), s.oracle_calls});
  }

  struct Event {
    long round;
    int node;
    int msg_count;
    long oracle_calls;
  };

  SimulationConfig cfg_;
  std::vector<NodeState> nodes_;
  std::vector<RoundLog> round_log_;
  std::vector<std::vector<AccessRecord>> per_node_access_;
  std::vector<AccessRecord> access_log_;
  std::vector<Event> events_;
};

/// True iff every recorded read was of the reader itself or a neighbour.
inline bool audit_locality(const std::vector<AccessRecord>& trace, const LaplacianGraph& g) {
  for (const auto& a : trace) {
    if (a.reader == a.owner) continue;
    if (a.reader < 0 || a.reader >= g.m() || a.owner < 0 || a.owner >= g.m()) return false;
    if (!g.adjacent(a.reader, a.owner)) return false;
  }
  return true;
}

}  // namespace decopt
