#!/usr/bin/env python
"""
Show current MeshLoc configuration.
"""

from dotenv import load_dotenv

from config import MeshLocConfig
from src.simulator import ProtocolConfig
from src.mesh_net import LinkModel
from src.uwb_ranging import UwbChannel
from src.relative_loc import SolverConfig


def main():
    # Load environment variables
    load_dotenv()

    print("=" * 70)
    print("MeshLoc Configuration")
    print("=" * 70)
    print()

    config = MeshLocConfig.from_env()

    print("📁 Output Settings:")
    print(f"   Output directory:      {config.output_dir}")
    print(f"   Metrics format:        {config.metrics_format}")
    print(f"   Worker processes:      {config.workers}")
    print(f"   Log level:             {config.log_level}")
    print(f"   Default scenario:      {config.default_scenario}")
    print()

    protocol = ProtocolConfig()
    print("📡 Protocol Defaults:")
    print(f"   OGM interval:          {protocol.ogm_interval} s (ttl {protocol.ogm_ttl})")
    print(f"   Route / peer expiry:   {protocol.route_expiry} s / {protocol.peer_expiry} s")
    print(f"   Ranging rate:          {protocol.ranging_rate} Hz")
    print(f"   Turnaround:            {protocol.turnaround * 1e6:.0f} µs ± {protocol.turnaround_jitter * 1e6:.0f} µs")
    print(f"   Session timeout:       {protocol.session_timeout * 1e3:.1f} ms")
    print(f"   Localization cadence:  {protocol.localization_cadence} s")
    print()

    link, channel = LinkModel(), UwbChannel()
    print("📶 Channel Defaults:")
    print(f"   Wi-Fi reference range: {link.reference_range} m (falloff {link.falloff_width} m)")
    print(f"   UWB sigma (LOS):       {channel.sigma_los} m")
    print(f"   UWB NLOS bias mean:    {channel.nlos_bias_mean} m")
    print(f"   UWB max range:         {channel.max_range} m")
    print()

    solver = SolverConfig()
    print("🧭 Solver Defaults:")
    print(f"   Mode:                  {solver.mode.value}")
    print(f"   Max iterations:        {solver.max_iters}")
    print(f"   Smoothing window:      {solver.smoothing_window}")
    print()

    print("=" * 70)
    print("Configuration Files:")
    print("=" * 70)
    print("   App settings:          config.py, .env (MESHLOC_LOG, MESHLOC_OUT, MESHLOC_FORMAT)")
    print("   Scenarios:             scenarios/*.json (python main.py example > new.json)")
    print()


if __name__ == "__main__":
    main()
