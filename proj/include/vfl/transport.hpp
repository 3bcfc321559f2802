#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>

#include "vfl/message.hpp"
#include "vfl/rng.hpp"

namespace vfl {

// Point-to-point transport as seen by one actor network. Delivery is
// exactly-once; receive() blocks until a message matching (to, tag, from,
// iteration) is available, so actors never act on another iteration's data.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(Message msg) = 0;
  virtual Message receive(std::int32_t to, MsgTag tag, std::int32_t from,
                          std::uint64_t iteration) = 0;
};

// Star network (server + J clients) with per-actor endpoints, counters, and
// an optional message log.
class TransportNetwork {
 public:
  virtual ~TransportNetwork() = default;
  virtual Transport& endpoint(std::int32_t actor) = 0;
  virtual std::uint64_t total_messages() const = 0;
  virtual std::uint64_t total_bytes() const = 0;
  virtual void abort(const std::string& reason) = 0;
  virtual std::string abort_reason() const = 0;
  // Message log in delivery order; null when logging is off.
  virtual const std::vector<Message>* log() const { return nullptr; }
};

// Shared-memory mailbox network. With shuffle_seed != 0 every insertion lands
// at a random queue position, which exercises delivery-order independence;
// matching in receive() keeps semantics identical either way.
class InProcessNetwork : public TransportNetwork {
 public:
  explicit InProcessNetwork(int num_actors, bool keep_log = false,
                            std::uint64_t shuffle_seed = 0);
  ~InProcessNetwork() override;

  Transport& endpoint(std::int32_t actor) override;
  std::uint64_t total_messages() const override { return messages_; }
  std::uint64_t total_bytes() const override { return bytes_; }
  void abort(const std::string& reason) override;
  std::string abort_reason() const override;
  const std::vector<Message>* log() const override { return keep_log_ ? &log_ : nullptr; }

  void push(Message msg);
  Message pop(std::int32_t to, MsgTag tag, std::int32_t from, std::uint64_t iteration);

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::deque<Message>> queues_;
  std::vector<std::unique_ptr<Transport>> endpoints_;
  std::vector<Message> log_;
  bool keep_log_ = false;
  std::uint64_t messages_ = 0;
  std::uint64_t bytes_ = 0;
  bool aborted_ = false;
  std::string abort_reason_;
  std::uint64_t shuffle_seed_ = 0;
  RngStream shuffle_rng_;
};

// Loopback TCP network using the documented length-prefixed wire format.
// The server endpoint must be created (and the port bound) before clients
// connect; construction blocks until the star is fully connected.
class SocketNetwork : public TransportNetwork {
 public:
  explicit SocketNetwork(int num_clients);
  ~SocketNetwork() override;

  Transport& endpoint(std::int32_t actor) override;
  std::uint64_t total_messages() const override;
  std::uint64_t total_bytes() const override;
  void abort(const std::string& reason) override;
  std::string abort_reason() const override;

  int port() const { return port_; }

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace vfl
