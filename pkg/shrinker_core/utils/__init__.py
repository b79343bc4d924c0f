# Shrinker core - utility modules
