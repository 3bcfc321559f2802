#include "vfl/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace vfl {

// ---------------------------------------------------------------------------
// In-process network
// ---------------------------------------------------------------------------

namespace {

class InProcessEndpoint : public Transport {
 public:
  explicit InProcessEndpoint(InProcessNetwork* net) : net_(net) {}
  void send(Message msg) override;
  Message receive(std::int32_t to, MsgTag tag, std::int32_t from,
                  std::uint64_t iteration) override;

 private:
  InProcessNetwork* net_;
};

}  // namespace

void InProcessEndpoint::send(Message msg) { net_->push(std::move(msg)); }

Message InProcessEndpoint::receive(std::int32_t to, MsgTag tag, std::int32_t from,
                                   std::uint64_t iteration) {
  return net_->pop(to, tag, from, iteration);
}

InProcessNetwork::InProcessNetwork(int num_actors, bool keep_log, std::uint64_t shuffle_seed)
    : queues_(static_cast<std::size_t>(num_actors)),
      keep_log_(keep_log),
      shuffle_seed_(shuffle_seed),
      shuffle_rng_(shuffle_seed, 424242) {
  for (int a = 0; a < num_actors; ++a) endpoints_.push_back(std::make_unique<InProcessEndpoint>(this));
}

InProcessNetwork::~InProcessNetwork() = default;

Transport& InProcessNetwork::endpoint(std::int32_t actor) {
  return *endpoints_.at(static_cast<std::size_t>(actor));
}

void InProcessNetwork::abort(const std::string& reason) {
  std::lock_guard<std::mutex> lock(mu_);
  aborted_ = true;
  if (abort_reason_.empty()) abort_reason_ = reason;
  cv_.notify_all();
}

std::string InProcessNetwork::abort_reason() const {
  std::lock_guard<std::mutex> lock(mu_);
  return abort_reason_;
}

void InProcessNetwork::push(Message msg) {
  std::lock_guard<std::mutex> lock(mu_);
  if (msg.to < 0 || static_cast<std::size_t>(msg.to) >= queues_.size())
    throw ProtocolError("transport: bad recipient " + std::to_string(msg.to));
  ++messages_;
  bytes_ += encode_message(msg).size();
  if (keep_log_) log_.push_back(msg);
  auto& q = queues_[static_cast<std::size_t>(msg.to)];
  if (shuffle_seed_ != 0 && !q.empty()) {
    const std::size_t at = shuffle_rng_.uniform_int(0, q.size());
    q.insert(q.begin() + static_cast<std::ptrdiff_t>(at), std::move(msg));
  } else {
    q.push_back(std::move(msg));
  }
  cv_.notify_all();
}

Message InProcessNetwork::pop(std::int32_t to, MsgTag tag, std::int32_t from,
                              std::uint64_t iteration) {
  std::unique_lock<std::mutex> lock(mu_);
  auto& q = queues_.at(static_cast<std::size_t>(to));
  for (;;) {
    if (aborted_) throw ProtocolError("transport aborted: " + abort_reason_);
    for (auto it = q.begin(); it != q.end(); ++it) {
      if (it->tag == tag && it->iteration == iteration && (from < 0 || it->from == from)) {
        Message out = std::move(*it);
        q.erase(it);
        return out;
      }
    }
    cv_.wait(lock);
  }
}

// ---------------------------------------------------------------------------
// Loopback TCP network
// ---------------------------------------------------------------------------

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t at = 0;
  while (at < len) {
    const ssize_t wrote = ::send(fd, data + at, len - at, MSG_NOSIGNAL);
    if (wrote <= 0) throw ProtocolError("socket transport: send failed");
    at += static_cast<std::size_t>(wrote);
  }
}

bool read_all(int fd, std::uint8_t* data, std::size_t len) {
  std::size_t at = 0;
  while (at < len) {
    const ssize_t got = ::recv(fd, data + at, len - at, 0);
    if (got <= 0) return false;
    at += static_cast<std::size_t>(got);
  }
  return true;
}

void write_message(int fd, const Message& msg) {
  const std::vector<std::uint8_t> framed = encode_message(msg);
  write_all(fd, framed.data(), framed.size());
}

Message read_message(int fd) {
  std::uint8_t prefix[4];
  if (!read_all(fd, prefix, 4)) throw ProtocolError("socket transport: connection closed");
  const std::uint32_t len = (static_cast<std::uint32_t>(prefix[0]) << 24) |
                            (static_cast<std::uint32_t>(prefix[1]) << 16) |
                            (static_cast<std::uint32_t>(prefix[2]) << 8) |
                            static_cast<std::uint32_t>(prefix[3]);
  std::vector<std::uint8_t> body(len);
  if (!read_all(fd, body.data(), len)) throw ProtocolError("socket transport: truncated frame");
  return decode_message(body.data(), body.size());
}

}  // namespace

struct SocketNetwork::Impl {
  int listen_fd = -1;
  std::vector<int> client_fds;       // index j: server's link to client j
  std::vector<int> client_side_fds;  // index j: client j's own socket
  std::mutex mu;
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  bool aborted = false;
  std::string reason;

  class Endpoint;
  std::vector<std::unique_ptr<Transport>> endpoints;

  void close_all() {
    for (int fd : client_fds)
      if (fd >= 0) ::close(fd);
    for (int fd : client_side_fds)
      if (fd >= 0) ::close(fd);
    if (listen_fd >= 0) ::close(listen_fd);
    client_fds.clear();
    client_side_fds.clear();
    listen_fd = -1;
  }
};

namespace {

class SocketEndpoint : public Transport {
 public:
  SocketEndpoint(SocketNetwork::Impl* impl, std::int32_t actor) : impl_(impl), actor_(actor) {}

  void send(Message msg) override {
    const int fd = route(msg.to);
    {
      std::lock_guard<std::mutex> lock(impl_->mu);
      if (impl_->aborted) throw ProtocolError("transport aborted: " + impl_->reason);
      ++impl_->messages;
      impl_->bytes += encode_message(msg).size();
    }
    write_message(fd, msg);
  }

  Message receive(std::int32_t to, MsgTag tag, std::int32_t from,
                  std::uint64_t iteration) override {
    if (to != actor_) throw ProtocolError("socket transport: endpoint/actor mismatch");
    Message msg = read_message(route(from));
    if (msg.tag != tag || msg.iteration != iteration)
      throw ProtocolError(std::string("socket transport: expected ") + msg_tag_name(tag) +
                          " got " + msg_tag_name(msg.tag));
    return msg;
  }

 private:
  int route(std::int32_t other) const {
    if (actor_ == 0) {
      if (other < 1 || static_cast<std::size_t>(other) > impl_->client_fds.size())
        throw ProtocolError("socket transport: server routing to unknown actor");
      return impl_->client_fds[static_cast<std::size_t>(other - 1)];
    }
    if (other != 0) throw ProtocolError("socket transport: clients only talk to the server");
    return impl_->client_side_fds[static_cast<std::size_t>(actor_ - 1)];
  }

  SocketNetwork::Impl* impl_;
  std::int32_t actor_;
};

}  // namespace

SocketNetwork::SocketNetwork(int num_clients) : impl_(new Impl) {
  impl_->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (impl_->listen_fd < 0) throw ProtocolError("socket transport: cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw ProtocolError("socket transport: bind failed");
  socklen_t len = sizeof addr;
  ::getsockname(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  ::listen(impl_->listen_fd, num_clients);

  impl_->client_fds.assign(static_cast<std::size_t>(num_clients), -1);
  impl_->client_side_fds.assign(static_cast<std::size_t>(num_clients), -1);

  // Connect every client to the hub, then identify each with a hello frame.
  for (int j = 0; j < num_clients; ++j) {
    const int cfd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (cfd < 0 || ::connect(cfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw ProtocolError("socket transport: connect failed");
    impl_->client_side_fds[static_cast<std::size_t>(j)] = cfd;
    Message hello;
    hello.tag = MsgTag::Control;
    hello.from = j + 1;
    hello.to = 0;
    hello.subject = j;
    hello.note = "hello";
    write_message(cfd, hello);
  }
  for (int j = 0; j < num_clients; ++j) {
    const int fd = ::accept(impl_->listen_fd, nullptr, nullptr);
    if (fd < 0) throw ProtocolError("socket transport: accept failed");
    const Message hello = read_message(fd);
    if (hello.tag != MsgTag::Control || hello.note != "hello")
      throw ProtocolError("socket transport: bad handshake");
    impl_->client_fds.at(static_cast<std::size_t>(hello.subject)) = fd;
  }

  for (int a = 0; a <= num_clients; ++a)
    impl_->endpoints.push_back(std::make_unique<SocketEndpoint>(impl_.get(), a));
}

SocketNetwork::~SocketNetwork() { impl_->close_all(); }

Transport& SocketNetwork::endpoint(std::int32_t actor) {
  return *impl_->endpoints.at(static_cast<std::size_t>(actor));
}

std::uint64_t SocketNetwork::total_messages() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->messages;
}

std::uint64_t SocketNetwork::total_bytes() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->bytes;
}

void SocketNetwork::abort(const std::string& reason) {
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->aborted = true;
    if (impl_->reason.empty()) impl_->reason = reason;
  }
  impl_->close_all();
}

std::string SocketNetwork::abort_reason() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->reason;
}

}  // namespace vfl
