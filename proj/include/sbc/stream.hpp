#pragma once

// Session protocol for demand-driven retrieval of codestream data.
//
// Every frame is a u32 length (of what follows), a u8 type and a payload.
// Client frames: HELLO(dataset), GET(region, max_resolution, max_layer,
// budget), CLOSE. Server frames: MANIFEST(header bytes), PACKETS(units),
// DONE(remaining units), ERR(code).
//
// The unit of transmission is a run of consecutive coding passes of one code
// block within one layer. The server remembers, per session, how many passes
// of each (layer, block) it has sent and never sends a pass twice.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sbc/bytes.hpp"
#include "sbc/codestream.hpp"
#include "sbc/error.hpp"

namespace sbc {

// ---------------------------------------------------------------------------
// Transports

class ByteChannel {
 public:
  virtual ~ByteChannel() = default;
  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  /// Fills `out` completely or throws io on end of stream.
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
  virtual void close() = 0;
};

namespace detail {

struct PipeBuffer {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> data;
  bool closed = false;
};

}  // namespace detail

/// One end of an in-process duplex pipe.
class PipeChannel : public ByteChannel {
 public:
  PipeChannel(std::shared_ptr<detail::PipeBuffer> in, std::shared_ptr<detail::PipeBuffer> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~PipeChannel() override { close(); }

  void write(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw Error(ErrorCode::io, "pipe closed");
    out_->data.insert(out_->data.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }

  void read_exact(std::span<std::uint8_t> out) override {
    std::unique_lock lock(in_->mu);
    std::size_t got = 0;
    while (got < out.size()) {
      in_->cv.wait(lock, [&] { return !in_->data.empty() || in_->closed; });
      if (in_->data.empty()) throw Error(ErrorCode::io, "pipe closed by peer");
      while (got < out.size() && !in_->data.empty()) {
        out[got++] = in_->data.front();
        in_->data.pop_front();
      }
    }
  }

  void close() override {
    for (auto* b : {in_.get(), out_.get()}) {
      std::lock_guard lock(b->mu);
      b->closed = true;
      b->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<detail::PipeBuffer> in_, out_;
};

inline std::pair<std::shared_ptr<ByteChannel>, std::shared_ptr<ByteChannel>> make_pipe() {
  auto a = std::make_shared<detail::PipeBuffer>(), b = std::make_shared<detail::PipeBuffer>();
  return {std::make_shared<PipeChannel>(a, b), std::make_shared<PipeChannel>(b, a)};
}

class TcpChannel : public ByteChannel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  void write(std::span<const std::uint8_t> bytes) override {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(ErrorCode::io, std::string("send failed: ") + std::strerror(errno));
      sent += static_cast<std::size_t>(n);
    }
  }

  void read_exact(std::span<std::uint8_t> out) override {
    std::size_t got = 0;
    while (got < out.size()) {
      const auto n = ::recv(fd_, out.data() + got, out.size() - got, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n == 0) throw Error(ErrorCode::io, "connection closed by peer");
      if (n < 0) throw Error(ErrorCode::io, std::string("recv failed: ") + std::strerror(errno));
      got += static_cast<std::size_t>(n);
    }
  }

  void close() override {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_;
};

class TcpListener {
 public:
  /// Binds to host:port; port 0 picks an ephemeral port.
  explicit TcpListener(std::uint16_t port, const std::string& host = "127.0.0.1") {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error(ErrorCode::io, "socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw Error(ErrorCode::bad_argument, "bad listen address: " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 16) < 0) {
      const std::string msg = std::strerror(errno);
      ::close(fd_);
      throw Error(ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port) + ": " + msg);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }

  /// Blocks for the next connection; returns null once shut down.
  std::shared_ptr<ByteChannel> accept() {
    while (true) {
      const int fd = ::accept(fd_, nullptr, nullptr);
      if (fd >= 0) return std::make_shared<TcpChannel>(fd);
      if (errno == EINTR) continue;
      return nullptr;
    }
  }

  void shutdown() { ::shutdown(fd_, SHUT_RDWR); }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

inline std::shared_ptr<ByteChannel> connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorCode::io, "cannot resolve " + host);
  int fd = -1;
  for (auto* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error(ErrorCode::io, "cannot connect to " + host + ":" + std::to_string(port));
  return std::make_shared<TcpChannel>(fd);
}

// ---------------------------------------------------------------------------
// Frames

enum class FrameType : std::uint8_t {
  hello = 0x01,
  get = 0x02,
  close = 0x03,
  manifest = 0x81,
  packets = 0x82,
  done = 0x83,
  err = 0x84,
};

enum class ProtocolError : std::uint8_t {
  unknown_dataset = 1,
  malformed = 2,
  budget_too_small = 3,
};

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 28;

struct Frame {
  FrameType type{};
  std::vector<std::uint8_t> payload;
};

/// Returns the number of bytes put on the wire.
inline std::size_t write_frame(ByteChannel& ch, FrameType type, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(payload.size() + 1));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(type));
  w.put_bytes(payload);
  ch.write(w.bytes());
  return w.size();
}

inline Frame read_frame(ByteChannel& ch) {
  std::uint8_t head[5];
  ch.read_exact(head);
  ByteReader r(std::span<const std::uint8_t>(head, 4));
  const auto len = r.get<std::uint32_t>();
  if (len == 0 || len > kMaxFrameBytes) throw Error(ErrorCode::protocol, "bad frame length");
  Frame f;
  f.type = static_cast<FrameType>(head[4]);
  f.payload.resize(len - 1);
  ch.read_exact(f.payload);
  return f;
}

struct GetRequest {
  std::optional<Region> region;
  int max_resolution = 255;    // clamped to the stream's levels
  std::size_t max_layer = 255; // count of layers, clamped
  std::uint64_t budget = std::uint64_t(-1);
};

inline std::vector<std::uint8_t> encode_get(const GetRequest& g) {
  ByteWriter w;
  w.put<std::uint8_t>(g.region ? 1 : 0);
  if (g.region) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.region->x));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.region->y));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.region->w));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.region->h));
  }
  w.put<std::uint8_t>(static_cast<std::uint8_t>(std::clamp(g.max_resolution, 0, 255)));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(std::min<std::size_t>(g.max_layer, 255)));
  w.put<std::uint64_t>(g.budget);
  return w.take();
}

inline GetRequest decode_get(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  GetRequest g;
  const auto has_region = r.get<std::uint8_t>();
  if (has_region > 1) throw Error(ErrorCode::protocol, "bad region flag");
  if (has_region) {
    Region reg;
    reg.x = r.get<std::uint32_t>();
    reg.y = r.get<std::uint32_t>();
    reg.w = r.get<std::uint32_t>();
    reg.h = r.get<std::uint32_t>();
    g.region = reg;
  }
  g.max_resolution = r.get<std::uint8_t>();
  g.max_layer = r.get<std::uint8_t>();
  g.budget = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw Error(ErrorCode::protocol, "trailing bytes in GET");
  return g;
}

/// Identity of one transmitted run of passes.
struct UnitKey {
  std::uint8_t layer = 0;
  std::uint8_t resolution = 0;
  std::uint16_t component = 0;
  std::uint32_t block = 0;
  std::uint8_t first_pass = 0;  // index within the layer's contribution
  std::uint8_t passes = 0;
  auto operator<=>(const UnitKey&) const = default;
};

struct Unit {
  UnitKey key;
  std::vector<std::uint32_t> pass_lengths;
  std::vector<std::uint8_t> data;
};

// ---------------------------------------------------------------------------
// Server

struct Dataset {
  Codestream codestream;
  BlockGeometry geometry;
  ContributionTable table;  // all layers
  std::vector<std::uint8_t> manifest;

  explicit Dataset(Codestream cs)
      : codestream(std::move(cs)),
        geometry(block_geometry(codestream.header())),
        table(read_contributions(codestream, geometry)),
        manifest(serialize_header(codestream.header())) {}
};

class Session {
 public:
  explicit Session(std::shared_ptr<const Dataset> ds)
      : ds_(std::move(ds)), sent_(ds_->table.size(), std::vector<std::uint8_t>(ds_->geometry.blocks.size(), 0)) {}

  const Dataset& dataset() const { return *ds_; }

  struct Reply {
    std::vector<Unit> units;
    std::uint64_t body_bytes = 0;
    std::uint64_t remaining = 0;
    bool budget_too_small = false;
  };

  /// Selects unsent passes relevant to the request in layer, resolution,
  /// component, block order and takes them while they fit in the budget.
  Reply get(const GetRequest& req) {
    const auto& h = ds_->codestream.header();
    const auto& g = ds_->geometry;
    Reply out;
    if (h.constant) return out;
    if (req.region && (req.region->w == 0 || req.region->h == 0 || req.region->x + req.region->w > h.nx ||
                       req.region->y + req.region->h > h.ny))
      throw Error(ErrorCode::out_of_bounds, "region outside the field");
    const int max_res = std::min(req.max_resolution, h.levels);
    const std::size_t max_layer = std::min(req.max_layer, ds_->table.size());
    const auto keep = select_blocks(h, g, max_res, req.region);

    std::uint64_t budget = req.budget;
    bool stopped = false;
    for (std::size_t l = 0; l < max_layer; ++l)
      for (int r = 0; r <= max_res; ++r)
        for (std::uint32_t c = 0; c < h.ncomp; ++c)
          for (auto b : g.groups[r][c]) {
            if (!keep[b]) continue;
            const auto& contrib = ds_->table[l][b];
            auto& sent = sent_[l][b];
            const std::size_t total = contrib.pass_lengths.size();
            if (sent == total) continue;
            if (stopped || (l > 0 && sent_[l - 1][b] != ds_->table[l - 1][b].pass_lengths.size())) {
              ++out.remaining;
              continue;
            }
            std::size_t offset = 0;
            for (std::size_t p = 0; p < sent; ++p) offset += contrib.pass_lengths[p];
            std::size_t n = 0, bytes = 0;
            while (sent + n < total) {
              const std::size_t len = contrib.pass_lengths[sent + n];
              const std::size_t cost = len + varint_size(len);
              if (bytes + cost > budget) break;
              bytes += cost;
              ++n;
            }
            if (n == 0) {
              if (out.units.empty()) {
                const std::size_t len = contrib.pass_lengths[sent];
                if (len + varint_size(len) > req.budget) out.budget_too_small = true;
              }
              stopped = true;
              ++out.remaining;
              continue;
            }
            Unit u;
            u.key = {static_cast<std::uint8_t>(l), static_cast<std::uint8_t>(r), static_cast<std::uint16_t>(c), b,
                     static_cast<std::uint8_t>(sent), static_cast<std::uint8_t>(n)};
            std::size_t data_len = 0;
            for (std::size_t p = sent; p < sent + n; ++p) {
              u.pass_lengths.push_back(contrib.pass_lengths[p]);
              data_len += contrib.pass_lengths[p];
            }
            u.data.assign(contrib.data.begin() + static_cast<std::ptrdiff_t>(offset),
                          contrib.data.begin() + static_cast<std::ptrdiff_t>(offset + data_len));
            budget -= bytes;
            out.body_bytes += bytes;
            sent += static_cast<std::uint8_t>(n);
            if (sent != total) {
              stopped = true;
              ++out.remaining;
            }
            out.units.push_back(std::move(u));
          }
    return out;
  }

 private:
  std::shared_ptr<const Dataset> ds_;
  std::vector<std::vector<std::uint8_t>> sent_;  // [layer][block] passes sent
};

inline std::vector<std::uint8_t> encode_units(const std::vector<Unit>& units) {
  ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(units.size()));
  for (const auto& u : units) {
    w.put<std::uint8_t>(u.key.layer);
    w.put<std::uint8_t>(u.key.resolution);
    w.put<std::uint16_t>(u.key.component);
    w.put<std::uint32_t>(u.key.block);
    w.put<std::uint8_t>(u.key.first_pass);
    w.put<std::uint8_t>(u.key.passes);
    ByteWriter body;
    for (auto len : u.pass_lengths) body.put_varint(len);
    body.put_bytes(u.data);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(body.size()));
    w.put_bytes(body.bytes());
  }
  return w.take();
}

inline std::vector<Unit> decode_units(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  const auto count = r.get<std::uint32_t>();
  std::vector<Unit> units;
  for (std::uint32_t i = 0; i < count; ++i) {
    Unit u;
    u.key.layer = r.get<std::uint8_t>();
    u.key.resolution = r.get<std::uint8_t>();
    u.key.component = r.get<std::uint16_t>();
    u.key.block = r.get<std::uint32_t>();
    u.key.first_pass = r.get<std::uint8_t>();
    u.key.passes = r.get<std::uint8_t>();
    const auto body_len = r.get<std::uint32_t>();
    ByteReader body(r.get_bytes(body_len));
    std::size_t data_len = 0;
    for (int p = 0; p < u.key.passes; ++p) {
      u.pass_lengths.push_back(static_cast<std::uint32_t>(body.get_varint()));
      data_len += u.pass_lengths.back();
    }
    auto data = body.get_bytes(data_len);
    if (body.remaining() != 0) throw Error(ErrorCode::protocol, "unit body length mismatch");
    u.data.assign(data.begin(), data.end());
    units.push_back(std::move(u));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::protocol, "trailing bytes in PACKETS");
  return units;
}

class Server {
 public:
  void add_dataset(const std::string& id, Codestream cs) {
    auto ds = std::make_shared<const Dataset>(std::move(cs));
    std::lock_guard lock(mu_);
    datasets_[id] = std::move(ds);
  }

  std::shared_ptr<const Dataset> find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = datasets_.find(id);
    return it == datasets_.end() ? nullptr : it->second;
  }

  /// Runs one session until CLOSE, end of stream or a malformed frame.
  void serve_session(ByteChannel& ch) const {
    std::optional<Session> session;
    auto send_err = [&](ProtocolError e) {
      const std::uint8_t code = static_cast<std::uint8_t>(e);
      write_frame(ch, FrameType::err, std::span(&code, 1));
    };
    try {
      while (true) {
        Frame f;
        try {
          f = read_frame(ch);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::protocol) send_err(ProtocolError::malformed);
          break;
        }
        try {
          if (f.type == FrameType::close) break;
          if (f.type == FrameType::hello) {
            ByteReader r(f.payload);
            const auto id = r.get_string();
            if (r.remaining() != 0) throw Error(ErrorCode::protocol, "trailing bytes in HELLO");
            auto ds = find(id);
            if (!ds) {
              session.reset();
              send_err(ProtocolError::unknown_dataset);
              continue;
            }
            session.emplace(ds);
            write_frame(ch, FrameType::manifest, ds->manifest);
            continue;
          }
          if (f.type != FrameType::get || !session) throw Error(ErrorCode::protocol, "unexpected frame");
          const auto reply = session->get(decode_get(f.payload));
          if (reply.budget_too_small) {
            send_err(ProtocolError::budget_too_small);
            continue;
          }
          write_frame(ch, FrameType::packets, encode_units(reply.units));
          ByteWriter w;
          w.put<std::uint64_t>(reply.remaining);
          write_frame(ch, FrameType::done, w.bytes());
        } catch (const Error&) {
          send_err(ProtocolError::malformed);
          break;
        }
      }
    } catch (const Error&) {
      // transport failure: drop the session
    }
    ch.close();
  }

  /// Accepts connections until the listener is shut down; one thread per session.
  void serve(TcpListener& listener) const {
    std::vector<std::thread> workers;
    while (auto ch = listener.accept()) workers.emplace_back([this, ch] { serve_session(*ch); });
    for (auto& w : workers) w.join();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
};

// ---------------------------------------------------------------------------
// Client

struct TranscriptEntry {
  std::size_t step = 0;  // index into the schedule
  GetRequest request;
  std::size_t units = 0;
  std::uint64_t body_bytes = 0;  // pass lengths and data
  std::uint64_t wire_bytes = 0;  // everything received for this GET
  std::uint64_t remaining = 0;
  std::vector<UnitKey> keys;
};

class Client {
 public:
  explicit Client(std::shared_ptr<ByteChannel> ch) : ch_(std::move(ch)) {}

  /// Opens a dataset; returns the manifest size in bytes.
  std::size_t hello(const std::string& dataset) {
    ByteWriter w;
    w.put_string(dataset);
    write_frame(*ch_, FrameType::hello, w.bytes());
    const auto f = expect_reply();
    if (f.type != FrameType::manifest) throw Error(ErrorCode::protocol, "expected MANIFEST");
    ByteReader r(f.payload);
    header_ = parse_header(r);
    geometry_ = block_geometry(header_);
    table_.assign(header_.layers.size(), std::vector<Contribution>(geometry_.blocks.size()));
    return f.payload.size() + 5;
  }

  TranscriptEntry get(const GetRequest& req) {
    if (!header_.nx) throw Error(ErrorCode::protocol, "GET before HELLO");
    TranscriptEntry t;
    t.request = req;
    write_frame(*ch_, FrameType::get, encode_get(req));
    const auto packets = expect_reply();
    if (packets.type != FrameType::packets) throw Error(ErrorCode::protocol, "expected PACKETS");
    t.wire_bytes += packets.payload.size() + 5;
    for (auto& u : decode_units(packets.payload)) {
      accept(u);
      t.body_bytes += u.data.size();
      for (auto len : u.pass_lengths) t.body_bytes += varint_size(len);
      t.keys.push_back(u.key);
      ++t.units;
    }
    const auto done = expect_reply();
    if (done.type != FrameType::done) throw Error(ErrorCode::protocol, "expected DONE");
    t.wire_bytes += done.payload.size() + 5;
    ByteReader r(done.payload);
    t.remaining = r.get<std::uint64_t>();
    return t;
  }

  void close() {
    write_frame(*ch_, FrameType::close, {});
    ch_->close();
  }

  const CodestreamHeader& header() const { return header_; }

  /// Codestream holding everything received so far; absent packets are empty.
  Codestream codestream() const {
    return Codestream::parse(assemble(header_, geometry_, table_, {.omit_empty_packets = true}));
  }

 private:
  Frame expect_reply() {
    auto f = read_frame(*ch_);
    if (f.type == FrameType::err) {
      const int code = f.payload.empty() ? 0 : f.payload[0];
      static constexpr const char* names[] = {"", "unknown dataset", "malformed request", "budget too small"};
      throw Error(ErrorCode::protocol,
                  "server error " + std::to_string(code) + (code >= 1 && code <= 3 ? std::string(": ") + names[code] : ""));
    }
    return f;
  }

  void accept(const Unit& u) {
    if (u.key.layer >= table_.size() || u.key.block >= geometry_.blocks.size())
      throw Error(ErrorCode::protocol, "unit outside the manifest");
    auto& c = table_[u.key.layer][u.key.block];
    if (u.key.first_pass != c.pass_lengths.size()) throw Error(ErrorCode::protocol, "unit passes out of order");
    c.pass_lengths.insert(c.pass_lengths.end(), u.pass_lengths.begin(), u.pass_lengths.end());
    c.data.insert(c.data.end(), u.data.begin(), u.data.end());
  }

  std::shared_ptr<ByteChannel> ch_;
  CodestreamHeader header_;
  BlockGeometry geometry_;
  ContributionTable table_;
};

struct ScheduleStep {
  GetRequest request;
  bool until_done = false;  // repeat the GET until DONE(0)
};

struct FetchResult {
  Codestream codestream;
  std::size_t manifest_bytes = 0;
  std::vector<TranscriptEntry> transcript;

  std::uint64_t total_wire_bytes() const {
    std::uint64_t s = manifest_bytes;
    for (const auto& t : transcript) s += t.wire_bytes;
    return s;
  }
};

inline FetchResult fetch_progressive(std::shared_ptr<ByteChannel> ch, const std::string& dataset,
                                     const std::vector<ScheduleStep>& schedule) {
  if (schedule.empty()) throw Error(ErrorCode::bad_argument, "schedule is empty");
  Client client(std::move(ch));
  FetchResult out;
  out.manifest_bytes = client.hello(dataset);
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    while (true) {
      auto t = client.get(schedule[s].request);
      t.step = s;
      const bool more = schedule[s].until_done && t.remaining > 0;
      const bool stalled = t.units == 0;
      out.transcript.push_back(std::move(t));
      if (!more) break;
      if (stalled) throw Error(ErrorCode::protocol, "server made no progress");
    }
  }
  client.close();
  out.codestream = client.codestream();
  return out;
}

}  // namespace sbc
