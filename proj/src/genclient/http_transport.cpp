#include <httplib.h>

#include "curate/error.hpp"
#include "curate/genclient/backend.hpp"

namespace curate::genclient {
namespace {

class HttplibTransport final : public Transport {
 public:
  HttplibTransport(std::string origin, int timeout_ms)
      : origin_(std::move(origin)), timeout_ms_(timeout_ms) {}

  HttpReply Post(const std::string& path, const std::string& body,
                 const Headers& headers) override {
    httplib::Client client(origin_);
    const auto timeout = std::chrono::milliseconds(timeout_ms_);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto result = client.Post(path, h, body, "application/json");
    if (!result) {
      const auto err = result.error();
      const std::string what = httplib::to_string(err);
      if (err == httplib::Error::Read || err == httplib::Error::Write ||
          err == httplib::Error::ConnectionTimeout) {
        throw Error(Errc::kTimeout, "request to " + origin_ + path + " failed: " + what);
      }
      throw Error(Errc::kIoError, "request to " + origin_ + path + " failed: " + what);
    }
    return {result->status, result->body};
  }

 private:
  std::string origin_;
  int timeout_ms_;
};

}  // namespace

std::unique_ptr<Transport> MakeHttpTransport(const std::string& origin, int timeout_ms) {
  return std::make_unique<HttplibTransport>(origin, timeout_ms);
}

}  // namespace curate::genclient
