#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>
#include <string>

#include "ubcsim/error.h"
#include "ubcsim/wire.h"

namespace ubcsim {

namespace {

struct Pipe {
  std::string bytes;
  bool closed = false;
};

class LoopbackConnection final : public Connection {
 public:
  LoopbackConnection(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackConnection() override { Close(); }

  void Send(const WireMessage& message) override {
    if (closed_ || out_->closed) {
      throw Error(ErrorCode::kConnectionRefused, "connection closed");
    }
    out_->bytes += EncodeFrame(message);
  }

  std::optional<WireMessage> Receive() override {
    if (closed_) return std::nullopt;
    if (!in_->bytes.empty()) {
      decoder_.Feed(in_->bytes);
      in_->bytes.clear();
    }
    return decoder_.Next();
  }

  void Close() override {
    closed_ = true;
    out_->closed = true;
    in_->closed = true;
  }

  // A closed peer still delivers what it sent before closing.
  bool closed() const override {
    return closed_ ||
           (in_->closed && in_->bytes.empty() && decoder_.buffered() == 0);
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
  FrameDecoder decoder_;
  bool closed_ = false;
};

}  // namespace

std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>>
MakeLoopbackPair() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<LoopbackConnection>(b_to_a, a_to_b),
          std::make_unique<LoopbackConnection>(a_to_b, b_to_a)};
}

FdConnection::FdConnection(int fd) : fd_(fd) {}

FdConnection::~FdConnection() { Close(); }

void FdConnection::Send(const WireMessage& message) {
  if (fd_ < 0) throw Error(ErrorCode::kConnectionRefused, "connection closed");
  std::string bytes = EncodeFrame(message);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent,
                       MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo,
                  std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

bool FdConnection::ReadAvailable(int timeout_ms) {
  if (fd_ < 0) return false;
  pollfd p{fd_, POLLIN, 0};
  int ready = ::poll(&p, 1, timeout_ms);
  if (ready <= 0) return false;
  char buf[4096];
  ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
  if (n == 0) {
    Close();
    return false;
  }
  if (n < 0) {
    if (errno == EINTR || errno == EAGAIN) return false;
    throw Error(ErrorCode::kIo,
                std::string("recv failed: ") + std::strerror(errno));
  }
  decoder_.Feed(std::string_view(buf, static_cast<std::size_t>(n)));
  return true;
}

std::optional<WireMessage> FdConnection::Receive() {
  while (ReadAvailable(0)) {
  }
  return decoder_.Next();
}

std::optional<WireMessage> FdConnection::ReceiveWait(int timeout_ms) {
  if (auto m = decoder_.Next()) return m;
  while (ReadAvailable(timeout_ms)) {
    if (auto m = decoder_.Next()) return m;
  }
  return decoder_.Next();
}

void FdConnection::Close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace ubcsim
