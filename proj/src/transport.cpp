#include "dfmm/transport.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

namespace dfmm
{

std::string_view to_string(CollectiveKind kind)
{
    switch (kind)
    {
        case CollectiveKind::neighbor_alltoallv: return "neighbor_alltoallv";
        case CollectiveKind::gatherv: return "gatherv";
        case CollectiveKind::scatterv: return "scatterv";
        case CollectiveKind::allgatherv: return "allgatherv";
        case CollectiveKind::alltoallv: return "alltoallv";
    }
    return "unknown";
}

TransportStats operator-(const TransportStats& a, const TransportStats& b)
{
    TransportStats d;
    for (std::size_t k = 0; k < kNumCollectiveKinds; ++k)
    {
        d.byKind[k].calls         = a.byKind[k].calls - b.byKind[k].calls;
        d.byKind[k].messagesSent  = a.byKind[k].messagesSent - b.byKind[k].messagesSent;
        d.byKind[k].bytesSent     = a.byKind[k].bytesSent - b.byKind[k].bytesSent;
        d.byKind[k].bytesReceived = a.byKind[k].bytesReceived - b.byKind[k].bytesReceived;
        d.byKind[k].seconds       = a.byKind[k].seconds - b.byKind[k].seconds;
    }
    return d;
}

CommGraph::CommGraph(std::vector<int> neighbors)
    : neighbors_(std::move(neighbors))
{
    std::sort(neighbors_.begin(), neighbors_.end());
    neighbors_.erase(std::unique(neighbors_.begin(), neighbors_.end()), neighbors_.end());
}

bool CommGraph::contains(int rank) const { return position(rank) >= 0; }

int CommGraph::position(int rank) const
{
    auto it = std::lower_bound(neighbors_.begin(), neighbors_.end(), rank);
    if (it == neighbors_.end() || *it != rank) { return -1; }
    return static_cast<int>(it - neighbors_.begin());
}

double Clock::now() const
{
    if (!enabled_) { return 0.0; }
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::string selected_backend()
{
    const char* env = std::getenv("FMM_BACKEND");
    return env && *env ? std::string(env) : std::string("sim");
}

namespace
{

enum class Op : int
{
    neighbor_alltoallv = 0,
    gatherv,
    scatterv,
    allgatherv,
    alltoallv,
    create_graph,
};

std::string opName(Op op)
{
    if (op == Op::create_graph) { return "create_graph"; }
    return std::string(to_string(static_cast<CollectiveKind>(op)));
}

struct Pending
{
    Op op{};
    int root{0};
    std::vector<std::vector<Buffer>> outgoing;
    std::vector<std::vector<int>> graphs;
    int arrived{0};
    int departed{0};
    bool complete{false};
};

} // namespace

struct SimWorld::State
{
    explicit State(int p)
        : seq(p, 0)
        , finished(p, false)
        , stats(p)
    {
    }

    std::mutex mutex;
    std::condition_variable cv;
    std::map<std::uint64_t, Pending> pending;
    std::vector<std::uint64_t> seq;
    std::vector<bool> finished;
    std::string failure;
    std::vector<TransportStats> stats;
};

namespace
{

class SimCommunicator final : public Communicator
{
public:
    SimCommunicator(SimWorld::State& state, int rank, int size, Clock clock)
        : state_(state)
        , rank_(rank)
        , size_(size)
        , clock_(clock)
    {
    }

    int rank() const override { return rank_; }
    int size() const override { return size_; }
    std::string_view backend() const override { return "sim"; }

    std::vector<Buffer> allgatherv(Buffer payload) override
    {
        std::vector<Buffer> out(size_, payload);
        return exchange(Op::allgatherv, 0, std::move(out), {});
    }

    std::vector<Buffer> alltoallv(std::vector<Buffer> outgoing) override
    {
        if (outgoing.size() != static_cast<std::size_t>(size_))
        {
            throw Error("alltoallv: expected one buffer per rank");
        }
        return exchange(Op::alltoallv, 0, std::move(outgoing), {});
    }

    std::vector<Buffer> gatherv(int root, Buffer payload) override
    {
        checkRoot(root);
        std::vector<Buffer> out(size_);
        out[root] = std::move(payload);
        auto in   = exchange(Op::gatherv, root, std::move(out), {});
        if (rank_ != root) { return {}; }
        return in;
    }

    Buffer scatterv(int root, std::vector<Buffer> segments) override
    {
        checkRoot(root);
        std::vector<Buffer> out(size_);
        if (rank_ == root)
        {
            if (segments.size() != static_cast<std::size_t>(size_))
            {
                throw Error("scatterv: segment count " + std::to_string(segments.size()) + " does not match world size");
            }
            out = std::move(segments);
        }
        auto in = exchange(Op::scatterv, root, std::move(out), {});
        return std::move(in[root]);
    }

    std::vector<Buffer> neighbor_alltoallv(const CommGraph& graph, std::vector<Buffer> outgoing) override
    {
        if (outgoing.size() != graph.degree())
        {
            throw Error("neighbor_alltoallv: " + std::to_string(outgoing.size()) + " send buffers for a graph of degree " +
                        std::to_string(graph.degree()));
        }
        std::vector<Buffer> out(size_);
        auto nbrs = graph.neighbors();
        for (std::size_t i = 0; i < nbrs.size(); ++i)
        {
            out[nbrs[i]] = std::move(outgoing[i]);
        }
        auto in = exchange(Op::neighbor_alltoallv, 0, std::move(out), {nbrs.begin(), nbrs.end()});
        std::vector<Buffer> result(nbrs.size());
        for (std::size_t i = 0; i < nbrs.size(); ++i)
        {
            result[i] = std::move(in[nbrs[i]]);
        }
        return result;
    }

    CommGraph create_graph(std::vector<int> neighbors) override
    {
        CommGraph g(std::move(neighbors));
        for (int n : g.neighbors())
        {
            if (n < 0 || n >= size_ || n == rank_) { throw Error("create_graph: invalid neighbor rank " + std::to_string(n)); }
        }
        exchange(Op::create_graph, 0, std::vector<Buffer>(size_), {g.neighbors().begin(), g.neighbors().end()});
        return g;
    }

    const TransportStats& stats() const override { return state_.stats[rank_]; }

private:
    void checkRoot(int root) const
    {
        if (root < 0 || root >= size_) { throw Error("collective root out of range"); }
    }

    [[noreturn]] void fail(std::unique_lock<std::mutex>& lock, std::string message)
    {
        if (state_.failure.empty()) { state_.failure = message; }
        lock.unlock();
        state_.cv.notify_all();
        throw Error(message);
    }

    std::optional<std::string> validate(const Pending& p) const
    {
        if (p.op != Op::create_graph && p.op != Op::neighbor_alltoallv) { return std::nullopt; }
        auto has = [&](int a, int b) { return std::binary_search(p.graphs[a].begin(), p.graphs[a].end(), b); };
        for (int s = 0; s < size_; ++s)
        {
            for (int d : p.graphs[s])
            {
                if (!has(d, s))
                {
                    return opName(p.op) + ": graph is not symmetric (rank " + std::to_string(s) + " lists " +
                           std::to_string(d) + " but not vice versa)";
                }
            }
            for (int d = 0; d < size_; ++d)
            {
                if (!p.outgoing[s][d].empty() && !has(s, d))
                {
                    return "neighbor_alltoallv: graph confinement violated between ranks " + std::to_string(s) +
                           " and " + std::to_string(d);
                }
            }
        }
        return std::nullopt;
    }

    std::vector<Buffer> exchange(Op op, int root, std::vector<Buffer> outgoing, std::vector<int> graph)
    {
        const double start = clock_.now();
        std::uint64_t sentMessages = 0, sentBytes = 0;
        for (int d = 0; d < size_; ++d)
        {
            if (d != rank_ && !outgoing[d].empty())
            {
                ++sentMessages;
                sentBytes += outgoing[d].size();
            }
        }

        std::unique_lock lock(state_.mutex);
        if (!state_.failure.empty()) { throw TransportAborted("transport aborted: " + state_.failure); }
        const std::uint64_t id = state_.seq[rank_]++;
        Pending& p             = state_.pending[id];
        if (p.arrived == 0)
        {
            p.op   = op;
            p.root = root;
            p.outgoing.resize(size_);
            p.graphs.resize(size_);
        }
        else if (p.op != op || p.root != root)
        {
            fail(lock, "collective mismatch at call #" + std::to_string(id) + ": rank " + std::to_string(rank_) +
                           " called " + opName(op) + " while others called " + opName(p.op));
        }
        p.outgoing[rank_] = std::move(outgoing);
        p.graphs[rank_]   = std::move(graph);
        if (++p.arrived == size_)
        {
            if (auto problem = validate(p)) { fail(lock, *problem); }
            p.complete = true;
            state_.cv.notify_all();
        }
        else
        {
            auto stalled = [&]() -> std::optional<int>
            {
                for (int k = 0; k < size_; ++k)
                {
                    if (state_.finished[k] && state_.seq[k] <= id) { return k; }
                }
                return std::nullopt;
            };
            state_.cv.wait(lock, [&] { return p.complete || !state_.failure.empty() || stalled().has_value(); });
            if (!p.complete)
            {
                if (auto k = stalled(); k && state_.failure.empty())
                {
                    fail(lock, "deadlock: stalled collective " + opName(op) + " (call #" + std::to_string(id) +
                                   "): rank " + std::to_string(*k) + " exited without calling it");
                }
                throw TransportAborted("transport aborted: " + state_.failure);
            }
        }

        std::vector<Buffer> incoming(size_);
        std::uint64_t receivedBytes = 0;
        for (int s = 0; s < size_; ++s)
        {
            incoming[s] = std::move(p.outgoing[s][rank_]);
            if (s != rank_) { receivedBytes += incoming[s].size(); }
        }
        if (++p.departed == size_) { state_.pending.erase(id); }

        if (op != Op::create_graph)
        {
            auto& st = state_.stats[rank_][static_cast<CollectiveKind>(op)];
            st.calls += 1;
            st.messagesSent += sentMessages;
            st.bytesSent += sentBytes;
            st.bytesReceived += receivedBytes;
            lock.unlock();
            st.seconds += clock_.now() - start;
        }
        return incoming;
    }

    SimWorld::State& state_;
    int rank_;
    int size_;
    Clock clock_;
};

} // namespace

SimWorld::SimWorld(int size, std::uint64_t seed, Clock clock)
    : size_(size)
    , seed_(seed)
    , clock_(clock)
{
    if (size < 1) { throw Error("world size must be at least 1"); }
    state_ = std::make_unique<State>(size);
}

SimWorld::~SimWorld() = default;

const TransportStats& SimWorld::stats(int rank) const { return state_->stats.at(rank); }

void SimWorld::run(const std::function<void(Communicator&)>& program)
{
    {
        std::lock_guard lock(state_->mutex);
        state_->failure.clear();
        state_->pending.clear();
        std::fill(state_->finished.begin(), state_->finished.end(), false);
        std::fill(state_->seq.begin(), state_->seq.end(), 0);
    }
    std::vector<std::exception_ptr> errors(size_);
    std::vector<bool> aborted(size_, false);

    auto body = [&](int r)
    {
        SimCommunicator comm(*state_, r, size_, clock_);
        try
        {
            program(comm);
        }
        catch (const TransportAborted&)
        {
            errors[r]  = std::current_exception();
            aborted[r] = true;
        }
        catch (const std::exception& e)
        {
            errors[r] = std::current_exception();
            std::lock_guard lock(state_->mutex);
            if (state_->failure.empty()) { state_->failure = "rank " + std::to_string(r) + " failed: " + e.what(); }
        }
        catch (...)
        {
            errors[r] = std::current_exception();
            std::lock_guard lock(state_->mutex);
            if (state_->failure.empty()) { state_->failure = "rank " + std::to_string(r) + " failed"; }
        }
        {
            std::lock_guard lock(state_->mutex);
            state_->finished[r] = true;
        }
        state_->cv.notify_all();
    };

    if (size_ == 1) { body(0); }
    else
    {
        std::vector<std::thread> threads;
        threads.reserve(size_);
        for (int r = 0; r < size_; ++r)
        {
            threads.emplace_back(body, r);
        }
        for (auto& t : threads)
        {
            t.join();
        }
    }

    for (int r = 0; r < size_; ++r)
    {
        if (errors[r] && !aborted[r]) { std::rethrow_exception(errors[r]); }
    }
    for (int r = 0; r < size_; ++r)
    {
        if (errors[r]) { std::rethrow_exception(errors[r]); }
    }
}

} // namespace dfmm
