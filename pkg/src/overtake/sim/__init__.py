"""Deterministic 2D multi-car simulator."""

from .collision import check_collisions, clearance_map, rects_overlap
from .env import RaceSim, SimConfig, StepResult
from .grid import (OccupancyGrid, load_map, load_spawns, make_corridor, make_ring,
                   rasterize_vehicle, save_map, save_spawns)
from .lidar import LidarConfig, LidarScan, beam_angles, raycast_lidar, scan_points, sensor_pose
from .vehicle import (VehicleParams, VehicleState, footprint_corners, step_bicycle, wrap_angle,
                      wrap_angles)

__all__ = [
    "check_collisions", "clearance_map", "rects_overlap", "RaceSim", "SimConfig", "StepResult", "OccupancyGrid",
    "load_map", "load_spawns", "make_corridor", "make_ring", "rasterize_vehicle", "save_map",
    "save_spawns", "LidarConfig", "LidarScan", "beam_angles", "raycast_lidar", "scan_points",
    "sensor_pose", "VehicleParams", "VehicleState", "footprint_corners", "step_bicycle",
    "wrap_angle", "wrap_angles",
]
