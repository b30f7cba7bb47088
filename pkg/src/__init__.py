# MeshLoc - mesh networking, UWB ranging and relative localization for aerial swarms
