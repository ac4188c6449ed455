// SPDX-License-Identifier: Apache-2.0
#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "kopt/error.hpp"
#include "kopt/runner.hpp"

namespace kopt {

using nlohmann::json;

SubprocessTransport::SubprocessTransport(std::vector<std::string> argv, std::chrono::milliseconds reply_timeout)
    : argv_(std::move(argv)), timeout_(reply_timeout) {
  if (argv_.empty()) throw InfrastructureError("runner command is empty");
  start();
}

SubprocessTransport::~SubprocessTransport() { stop(); }

void SubprocessTransport::start() {
  // A runner that dies mid-request must surface as an error, not kill us.
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0)
    throw InfrastructureError(std::string("pipe: ") + std::strerror(errno));

  std::vector<char*> args;
  for (auto& a : argv_) args.push_back(a.data());
  args.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) throw InfrastructureError(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(args[0], args.data());
    std::fprintf(stderr, "exec %s: %s\n", args[0], std::strerror(errno));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

void SubprocessTransport::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ <= 0) return;
  // Closing stdin asks the runner to exit; give it a moment before killing.
  for (int i = 0; i < 50; ++i) {
    int status = 0;
    if (::waitpid(pid_, &status, WNOHANG) == pid_) {
      pid_ = -1;
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ::kill(pid_, SIGKILL);
  ::waitpid(pid_, nullptr, 0);
  pid_ = -1;
}

std::string SubprocessTransport::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw InfrastructureError("runner did not reply within " + std::to_string(timeout_.count()) + " ms");
    pollfd p{from_child_, POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw InfrastructureError(std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    char buf[65536];
    ssize_t n = ::read(from_child_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw InfrastructureError(std::string("read from runner: ") + std::strerror(errno));
    }
    if (n == 0) throw InfrastructureError("runner closed its output (process exited)");
    buffer_.append(buf, static_cast<std::size_t>(n));
  }
}

json SubprocessTransport::roundtrip(const json& request) {
  if (to_child_ < 0) throw InfrastructureError("runner is not running");
  std::string line = request.dump() + "\n";
  std::size_t off = 0;
  while (off < line.size()) {
    ssize_t n = ::write(to_child_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw InfrastructureError(std::string("write to runner: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
  std::string reply = read_line();
  try {
    return json::parse(reply);
  } catch (const json::parse_error& e) {
    throw InfrastructureError("runner reply is not JSON: " + std::string(e.what()));
  }
}

}  // namespace kopt
