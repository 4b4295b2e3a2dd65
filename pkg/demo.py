#!/usr/bin/env python3
"""
Demo script walking through the ISAC service:
1. Checking the service is up
2. Bistatic Doppler factor for a few target positions
3. Validating a two-receiver walking scene
4. Running the full pipeline and summarizing the report
"""

import json
import os

import requests

from app.services import codecs
from app.services.scenarios import oval_walk_scene

# Configuration
BASE_URL = "http://localhost:5000"
SCENE_DIR = os.path.abspath("scenes")
RUN_DIR = os.path.abspath(os.path.join("runs", "demo_walk"))


def pretty_print(title, data):
    """Pretty print JSON response."""
    print(f"\n{'='*50}")
    print(f"📡 {title}")
    print(f"{'='*50}")
    print(json.dumps(data, indent=2))


def check_health():
    print("🔄 Checking service health...")
    response = requests.get(f"{BASE_URL}/status")
    if response.status_code == 200:
        result = response.json()
        print(f"✅ Service Status: {result['status'].upper()}")
        print(f"  Output dir: {result['output_dir']}, workers: {result['max_workers']}")
    else:
        print(f"❌ Health check failed: {response.status_code}")


def demo_bistatic_factor():
    """The Doppler scale factor shrinks as the target moves toward the baseline."""
    print("\n🔄 Bistatic Doppler factor along y for TX (0,0), RX (4,0)...")
    for y in (4.0, 2.0, 1.0, 0.5):
        response = requests.get(f"{BASE_URL}/geometry/bistatic-factor",
                                params={'tx': '0,0', 'rx': '4,0', 'p': f'2,{y}'})
        if response.status_code == 200:
            result = response.json()
            print(f"  • p=(2, {y}): beta={result['beta']:.3f} rad, xi={result['xi']:.3f}")
        else:
            print(f"  ❌ p=(2, {y}): {response.status_code} {response.text}")


def demo_scene():
    """Write the walking scene to disk and have the service validate it."""
    print("\n🔄 Validating the walking scene...")
    os.makedirs(SCENE_DIR, exist_ok=True)
    scene = oval_walk_scene(duration=2.0, seed=7)
    path = os.path.join(SCENE_DIR, 'demo_walk.json')
    codecs.save_scene(path, scene)

    response = requests.post(f"{BASE_URL}/scenes/validate", json=json.loads(scene.model_dump_json()))
    if response.status_code == 200:
        pretty_print("Scene Summary", response.json()['data'])
    else:
        print(f"❌ Scene rejected: {response.status_code}")
        print(response.text)
    return path


def demo_run(scene_path):
    print("\n🔄 Running simulate -> sync -> detect -> track -> mdoppler -> evaluate...")
    response = requests.post(f"{BASE_URL}/runs", json={'scene': scene_path, 'output_dir': RUN_DIR})
    if response.status_code != 201:
        print(f"❌ Run failed: {response.status_code}")
        print(response.text)
        return

    result = response.json()
    report = result['report']
    print(f"\n📈 RUN SUMMARY (seed {report['seed']}):")
    for rx in report['receivers']:
        print(f"  Receiver {rx['rx_id']}: {rx['frames']} frames")
        for key in ('los_detection_rate', 'fo_residual_std', 'detection_rate', 'false_alarms_per_frame',
                    'localization_median_error', 'confirmed_tracks', 'track_rmse', 'md_peak_mae_hz',
                    'mean_abs_peak_doppler_hz'):
            value = rx.get(key)
            shown = f"{value:.3f}" if isinstance(value, float) else value
            print(f"    • {key}: {shown}")
    for ratio in report['xi_ratios']:
        print(f"  Doppler ratio rx{ratio['rx_a']}/rx{ratio['rx_b']}: observed {ratio['observed']:.3f}, "
              f"predicted {ratio['predicted']:.3f} ({100 * ratio['relative_error']:.1f}% off)")
    print("\n⏱️ Stage timings:")
    for stage, seconds in result['stage_seconds'].items():
        print(f"  • {stage}: {seconds:.2f} s")


def main():
    """Run the complete demo."""
    print("🚀 Multistatic ISAC Demo")
    print("=" * 50)

    try:
        check_health()
        demo_bistatic_factor()
        scene_path = demo_scene()
        demo_run(scene_path)

        print("\n" + "=" * 50)
        print("🎉 Demo completed successfully!")
        print("=" * 50)
        print(f"\nArtifacts are in {RUN_DIR}")
        print("Re-run a single stage from those files with:")
        print("  python -m app.cli detect --in runs/demo_walk/rx0_synced.cirs "
              "--scene scenes/demo_walk.json --out /tmp/rx0_detections.csv")

    except requests.exceptions.ConnectionError:
        print("❌ Cannot connect to the server.")
        print("Please make sure the Flask app is running on http://localhost:5000")
        print("\nTo start the server:")
        print("  python -m app.main")

    except Exception as e:
        print(f"❌ Demo failed with error: {e}")


if __name__ == "__main__":
    main()
