/*
 *   Copyright 2026 The fewha authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fewha {

/// Persistent fork-barrier pool for the stage decomposition of M: each
/// parallel_for dispatches `count` independent tasks (one per layer or per
/// WFS) and returns only after all of them finished -- the barrier between
/// stages.  Degree n means n executing threads total; the caller participates,
/// so degree 1 runs everything inline.  Tasks must only write task-private or
/// disjoint buffers; results are independent of the schedule.
class ThreadPool {
public:
    explicit ThreadPool(int degree) : degree_(degree < 1 ? 1 : degree) {
        for (int i = 0; i < degree_ - 1; ++i) workers_.emplace_back([this] { worker_loop(); });
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int degree() const { return degree_; }

    void parallel_for(int count, const std::function<void(int)>& fn) {
        if (count <= 0) return;
        if (workers_.empty() || count == 1) {
            for (int i = 0; i < count; ++i) fn(i);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(m_);
            job_ = &fn;
            count_ = count;
            next_.store(0, std::memory_order_relaxed);
            busy_ = static_cast<int>(workers_.size());
            error_ = nullptr;
            ++generation_;
        }
        cv_start_.notify_all();
        run_tasks(fn, count);
        {
            std::unique_lock<std::mutex> lk(m_);
            cv_done_.wait(lk, [this] { return busy_ == 0; });
            job_ = nullptr;
            if (error_) std::rethrow_exception(error_);
        }
    }

private:
    void run_tasks(const std::function<void(int)>& fn, int count) {
        for (int i; (i = next_.fetch_add(1, std::memory_order_relaxed)) < count;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(m_);
                if (!error_) error_ = std::current_exception();
            }
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* fn;
            int count;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                fn = job_;
                count = count_;
            }
            run_tasks(*fn, count);
            {
                std::lock_guard<std::mutex> lk(m_);
                if (--busy_ == 0) cv_done_.notify_all();
            }
        }
    }

    int degree_;
    std::vector<std::thread> workers_;
    std::mutex m_;
    std::condition_variable cv_start_, cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    int count_ = 0;
    std::atomic<int> next_{0};
    int busy_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

}  // namespace fewha
