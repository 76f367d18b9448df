/*
 * Cache-occupancy sweep and sweep counting in the browser.
 *
 * The buffer carries its own traversal order: one slot per cache line,
 * each slot holding the index of the next, pages visited in a permuted
 * order and lines permuted within each page with no +1 steps, so stride
 * prefetchers learn nothing. Occupancy times one full traversal per
 * period; sweep counting counts completed traversals between ticks of a
 * deliberately coarse clock.
 */
/*__CONFIG__*/

function lcg(seed) {
  var state = (seed >>> 0) || 1;
  return function () {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    return state / 4294967296;
  };
}

function permutation(n, rand) {
  var perm = new Array(n);
  for (var i = 0; i < n; i++) perm[i] = i;
  for (var j = n - 1; j > 0; j--) {
    var k = Math.floor(rand() * (j + 1));
    var tmp = perm[j];
    perm[j] = perm[k];
    perm[k] = tmp;
  }
  // repair +1 successors (anti-prefetch order)
  for (var pass = 0; pass < 64; pass++) {
    var fixed = true;
    for (var m = 0; m + 1 < n; m++) {
      if (perm[m + 1] === perm[m] + 1) {
        var swap = (m + 2) % n;
        tmp = perm[m + 1];
        perm[m + 1] = perm[swap];
        perm[swap] = tmp;
        fixed = false;
      }
    }
    if (fixed) break;
  }
  return perm;
}

function buildChain(nLines, linesPerPage, seed) {
  var rand = lcg(seed);
  var nPages = Math.ceil(nLines / linesPerPage);
  var pageOrder = permutation(nPages, rand);
  var order = [];
  for (var p = 0; p < nPages; p++) {
    var first = pageOrder[p] * linesPerPage;
    var count = Math.min(linesPerPage, nLines - first);
    var lines = permutation(count, rand);
    for (var i = 0; i < count; i++) order.push(first + lines[i]);
  }
  var chain = new Int32Array(nLines);
  for (var j = 0; j < order.length; j++) {
    chain[order[j]] = order[(j + 1) % order.length];
  }
  return { chain: chain, start: order[0] };
}

function sweepOnce(buf) {
  var idx = buf.start;
  var chain = buf.chain;
  for (var i = 0; i < chain.length; i++) {
    idx = chain[idx];
  }
  return idx; // data-dependent result: the walk cannot be skipped
}

function occupancyLoop(config, deps) {
  // deps: now() -> ms, emit(t_us, duration_us); runs for config.duration_ms
  var buf = deps.buffer || buildChain(config.n_lines, config.lines_per_page || 64,
                                      config.seed || 1);
  var start = deps.now();
  var periodMs = config.period_ms;
  var samples = 0;
  while (deps.now() - start < config.duration_ms) {
    var t0 = deps.now();
    var sink = sweepOnce(buf);
    var t1 = deps.now();
    if (sink < 0) throw new Error("unreachable");
    deps.emit(Math.round((t0 - start) * 1000), (t1 - t0) * 1000);
    samples++;
    var next = start + samples * periodMs;
    while (deps.now() < next && deps.now() - start < config.duration_ms) {
      // spin to the next period boundary; overruns start immediately
      if (t1 - t0 >= periodMs) break;
    }
  }
  return samples;
}

function sweepCountLoop(config, deps) {
  // deps: nowCoarse() -> ms quantized to the tick, now() -> ms, emit(t_us, count)
  // counts traversals that start and finish inside one tick window
  var buf = deps.buffer || buildChain(config.n_lines, config.lines_per_page || 64,
                                      config.seed || 1);
  var tickMs = config.tick_ms;
  var nWindows = Math.floor(config.duration_ms / tickMs);
  var windows = 0;
  var count = 0;
  var epoch = deps.nowCoarse();
  while (deps.nowCoarse() === epoch) {
    // align to the next tick edge
  }
  var windowStart = deps.nowCoarse();
  while (windows < nWindows) {
    var t0 = deps.nowCoarse();
    sweepOnce(buf);
    var t1 = deps.nowCoarse();
    if (t1 === windowStart) {
      if (t0 === windowStart) count++;
    } else {
      while (windowStart < t1 && windows < nWindows) {
        deps.emit(Math.round((windows * tickMs) * 1000), count);
        count = 0;
        windows++;
        windowStart += tickMs;
      }
      windowStart = t1;
    }
  }
  return windows;
}

if (typeof window !== "undefined" && globalThis.__PROBE_CONFIG__ &&
    (globalThis.__PROBE_CONFIG__.technique === "occupancy" ||
     globalThis.__PROBE_CONFIG__.technique === "sweep_count")) {
  (function () {
    var config = globalThis.__PROBE_CONFIG__;
    var samples = [];
    var deps = {
      now: function () { return performance.now(); },
      nowCoarse: function () {
        return Math.floor(performance.now() / config.tick_ms) * config.tick_ms;
      },
      emit: function (t, v) { samples.push([t, v]); },
    };
    if (config.technique === "occupancy") {
      occupancyLoop(config, deps);
    } else {
      sweepCountLoop(config, deps);
    }
    globalThis.__PROBE_SAMPLES__ = samples;
  })();
}
