# Point sets, tilings and neighbor relations
