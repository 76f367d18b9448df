/*
 * DNS-racing probe rounds.
 *
 * Each round points an image at a hostname that cannot resolve and races
 * cache probe iterations against the asynchronous error callback; the
 * iteration count is the sample. No timer API is touched: the resolver's
 * fixed round-trip to the failure *is* the clock.
 */
/*__CONFIG__*/

function raceHostname(config, round) {
  return config.nonces[round] + "-" + round + "." + config.trace_id + "." + config.zone;
}

function dnsRaceRound(config, round, deps) {
  // deps: startResolve(hostname, onError), probeOnce(), yieldTask() -> Promise
  return new Promise(function (resolve) {
    var done = false;
    var count = 0;
    var limit = config.round_timeout_probes || 1000000;
    deps.startResolve(raceHostname(config, round), function () { done = true; });
    function step() {
      if (done) {
        resolve({ count: count, censored: false });
        return;
      }
      if (count >= limit) {
        resolve({ count: count, censored: true });
        return;
      }
      deps.probeOnce();
      count++;
      deps.yieldTask().then(step);
    }
    step();
  });
}

async function dnsRaceLoop(config, deps) {
  var samples = [];
  for (var r = 0; r < config.rounds; r++) {
    samples.push(await dnsRaceRound(config, r, deps));
  }
  return samples;
}

if (typeof window !== "undefined" && globalThis.__PROBE_CONFIG__ &&
    globalThis.__PROBE_CONFIG__.technique === "dns_racing") {
  (function () {
    var config = globalThis.__PROBE_CONFIG__;
    var buf = new Uint8Array(config.probe_bytes || (1 << 22));
    var channel = new MessageChannel();
    var pending = null;
    channel.port1.onmessage = function () {
      var fn = pending;
      pending = null;
      if (fn) fn();
    };
    dnsRaceLoop(config, {
      startResolve: function (hostname, onError) {
        var img = new Image();
        img.onerror = onError;
        img.src = "https://" + hostname + "/x.png";
      },
      probeOnce: function () {
        var acc = 0;
        for (var i = 0; i < buf.length; i += 64) {
          acc ^= buf[i];
        }
        return acc;
      },
      yieldTask: function () {
        return new Promise(function (resolve) {
          pending = resolve;
          channel.port2.postMessage(0);
        });
      },
    });
  })();
}
