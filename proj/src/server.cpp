#include <atomic>
#include <iostream>
#include <set>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "cosy/error.hpp"
#include "cosy/service.hpp"

namespace cosy {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& target) {
    std::vector<std::string> parts;
    const auto path = target.substr(0, target.find('?'));
    std::size_t pos = 0;
    while (pos < path.size()) {
        const auto next = path.find('/', pos);
        const auto part = path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        if (!part.empty()) parts.push_back(part);
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return parts;
}

http::status status_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::UnknownSession: return http::status::not_found;
        case ErrorCode::BadEdit: return http::status::bad_request;
        case ErrorCode::SessionLimit: return http::status::too_many_requests;
        case ErrorCode::CheckpointInvalid: return http::status::unprocessable_entity;
        default: return http::status::internal_server_error;
    }
}

json error_body(const Error& e) { return {{"error", to_string(e.code())}, {"message", e.what()}}; }

std::pair<std::string, int> split_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "address must be host:port, got " + addr);
    try {
        return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
    } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "bad port in " + addr);
    }
}

}  // namespace

struct Server::Impl {
    EditService& service;
    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::atomic<bool> stopping{false};
    std::mutex mutex;
    std::set<std::shared_ptr<tcp::socket>> sockets;
    std::vector<std::thread> threads;

    explicit Impl(EditService& s) : service(s) {}

    http::response<http::string_body> respond(const http::request<http::string_body>& req, http::status st,
                                              std::string body, const char* type) {
        http::response<http::string_body> res{st, req.version()};
        res.set(http::field::content_type, type);
        res.keep_alive(req.keep_alive());
        res.body() = std::move(body);
        res.prepare_payload();
        return res;
    }

    http::response<http::string_body> json_response(const http::request<http::string_body>& req, http::status st,
                                                    const json& body) {
        return respond(req, st, body.dump(), "application/json");
    }

    http::response<http::string_body> route(const http::request<http::string_body>& req) {
        const auto parts = split_path(std::string(req.target()));
        const auto method = req.method();
        try {
            if (parts.size() == 1 && parts[0] == "healthz" && method == http::verb::get) {
                return json_response(req, http::status::ok, {{"status", "ok"}, {"sessions", service.session_count()}});
            }
            if (parts.size() == 1 && parts[0] == "metrics" && method == http::verb::get) {
                return json_response(req, http::status::ok, service.metrics());
            }
            if (parts.size() == 1 && parts[0] == "session" && method == http::verb::post) {
                json body = req.body().empty() ? json::object() : json::parse(req.body(), nullptr, false);
                if (body.is_discarded() || !body.is_object()) throw Error(ErrorCode::BadEdit, "body must be a JSON object");
                std::uint64_t seed = 0;
                if (body.contains("seed")) {
                    if (!body["seed"].is_number_integer()) throw Error(ErrorCode::BadEdit, "seed must be an integer");
                    seed = body["seed"].get<std::uint64_t>();
                }
                std::string ckpt;
                if (body.contains("checkpoint")) {
                    if (!body["checkpoint"].is_string()) throw Error(ErrorCode::BadEdit, "checkpoint must be a string");
                    ckpt = body["checkpoint"].get<std::string>();
                    if (ckpt.find("..") != std::string::npos || (!ckpt.empty() && ckpt[0] == '/')) {
                        throw Error(ErrorCode::BadEdit, "checkpoint must name a file inside the checkpoint directory");
                    }
                }
                auto s = service.create_session(seed, ckpt);
                const auto& f = s->frame();
                return json_response(req, http::status::ok,
                                     {{"id", s->id()}, {"frame_id", f.id}, {"width", f.width}, {"height", f.height}});
            }
            if (parts.size() >= 2 && parts[0] == "session") {
                const auto& id = parts[1];
                if (parts.size() == 2 && method == http::verb::delete_) {
                    service.close_session(id);
                    return json_response(req, http::status::ok, {{"id", id}});
                }
                if (parts.size() == 3 && parts[2] == "edit" && method == http::verb::post) {
                    const json edit = json::parse(req.body(), nullptr, false);
                    if (edit.is_discarded()) throw Error(ErrorCode::BadEdit, "edit is not valid JSON");
                    const auto f = service.edit(id, edit);
                    return json_response(req, http::status::ok, {{"frame_id", f.id}, {"latency_ms", f.latency_ms}});
                }
                if (parts.size() == 3 && method == http::verb::get) {
                    auto s = service.session(id);
                    std::lock_guard lock(s->mutex);
                    if (parts[2] == "frame") return respond(req, http::status::ok, s->frame().png(), "image/png");
                    if (parts[2] == "export") {
                        return respond(req, http::status::ok, s->export_splat(), "application/octet-stream");
                    }
                    if (parts[2] == "hashes") {
                        json body;
                        const auto h = s->content_hashes();
                        const auto& c = s->counters();
                        for (auto comp : kComponents) {
                            const int i = index_of(comp);
                            const std::string name(component_name(comp));
                            body["content"][name] = hex64(h[i]);
                            body["geometry"][name] = hex64(s->scene().sets[i].geometry_hash());
                            body["cache"][name] = {{"features_hits", c.features[i].hits},
                                                   {"features_misses", c.features[i].misses},
                                                   {"geometry_hits", c.geometry[i].hits},
                                                   {"geometry_misses", c.geometry[i].misses},
                                                   {"colors_hits", c.colors[i].hits},
                                                   {"colors_misses", c.colors[i].misses}};
                        }
                        body["frame_id"] = s->frame().id;
                        body["glasses_active"] = s->scene().glasses_active;
                        return json_response(req, http::status::ok, body);
                    }
                }
            }
            return json_response(req, http::status::not_found, {{"error", "NotFound"}, {"message", "no such route"}});
        } catch (const Error& e) {
            return json_response(req, status_for(e.code()), error_body(e));
        } catch (const std::exception& e) {
            return json_response(req, http::status::internal_server_error, {{"error", "Internal"}, {"message", e.what()}});
        }
    }

    void stream(tcp::socket& sock, const http::request<http::string_body>& req, const std::string& id) {
        std::shared_ptr<Session> s;
        try {
            s = service.session(id);
        } catch (const Error& e) {
            http::write(sock, json_response(req, status_for(e.code()), error_body(e)));
            return;
        }
        websocket::stream<tcp::socket&> ws(sock);
        ws.accept(req);
        std::string first;
        {
            std::lock_guard lock(s->mutex);
            first = s->frame().stream_message();
        }
        ws.binary(true);
        ws.write(net::buffer(first));
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            ws.read(buf, ec);
            if (ec) return;
            const auto text = beast::buffers_to_string(buf.data());
            json reply;
            try {
                const json edit = json::parse(text, nullptr, false);
                if (edit.is_discarded()) throw Error(ErrorCode::BadEdit, "edit is not valid JSON");
                const auto f = service.edit(id, edit);
                ws.binary(true);
                ws.write(net::buffer(f.stream_message()));
                reply = {{"frame_id", f.id}, {"latency_ms", f.latency_ms}};
            } catch (const Error& e) {
                reply = error_body(e);
            }
            ws.text(true);
            ws.write(net::buffer(reply.dump()), ec);
            if (ec) return;
        }
    }

    void handle(std::shared_ptr<tcp::socket> sock) {
        beast::flat_buffer buf;
        try {
            for (;;) {
                http::request<http::string_body> req;
                beast::error_code ec;
                http::read(*sock, buf, req, ec);
                if (ec) break;
                if (websocket::is_upgrade(req)) {
                    const auto parts = split_path(std::string(req.target()));
                    if (parts.size() == 3 && parts[0] == "session" && parts[2] == "stream") {
                        stream(*sock, req, parts[1]);
                    } else {
                        http::write(*sock, json_response(req, http::status::not_found, {{"error", "NotFound"}}));
                    }
                    break;
                }
                auto res = route(req);
                const bool keep = res.keep_alive();
                http::write(*sock, res, ec);
                if (ec || !keep) break;
            }
        } catch (const std::exception& e) {
            if (!stopping) std::cerr << "serve: connection error: " << e.what() << "\n";
        }
        beast::error_code ignored;
        sock->shutdown(tcp::socket::shutdown_both, ignored);
        std::lock_guard lock(mutex);
        sockets.erase(sock);
    }
};

Server::Server(EditService& service, const std::string& addr) : impl_(std::make_unique<Impl>(service)) {
    const auto [host, port] = split_addr(addr);
    beast::error_code ec;
    const auto ip = net::ip::make_address(host, ec);
    if (ec) throw Error(ErrorCode::ConfigError, "bad host " + host);
    const tcp::endpoint ep(ip, static_cast<unsigned short>(port));
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep, ec);
    if (ec) throw Error(ErrorCode::ConfigError, "cannot bind " + addr + ": " + ec.message());
    impl_->acceptor.listen();
}

Server::~Server() {
    stop();
    beast::error_code ec;
    impl_->acceptor.close(ec);
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() {
    for (;;) {
        auto sock = std::make_shared<tcp::socket>(impl_->ioc);
        beast::error_code ec;
        impl_->acceptor.accept(*sock, ec);
        if (impl_->stopping) break;
        if (ec) continue;
        std::lock_guard lock(impl_->mutex);
        impl_->sockets.insert(sock);
        impl_->threads.emplace_back([this, sock] { impl_->handle(sock); });
    }
    beast::error_code ec;
    impl_->acceptor.close(ec);
}

void Server::stop() {
    if (impl_->stopping.exchange(true)) return;
    beast::error_code ec;
    // A blocking accept() is not woken by close(); a throwaway connection is.
    if (impl_->acceptor.is_open()) {
        auto ep = impl_->acceptor.local_endpoint(ec);
        if (!ec) {
            if (ep.address().is_unspecified()) ep.address(net::ip::make_address("127.0.0.1"));
            tcp::socket poke(impl_->ioc);
            poke.connect(ep, ec);
        }
    }
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(impl_->mutex);
        for (auto& s : impl_->sockets) s->shutdown(tcp::socket::shutdown_both, ec);
        threads.swap(impl_->threads);
    }
    for (auto& t : threads) t.join();
}

}  // namespace cosy
